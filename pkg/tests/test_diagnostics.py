from collections.abc import Callable

import numpy as np
import pytest
from scipy.stats import norm

from rcg_uda.diagnostics import (
    CHOL_TOLERANCE,
    MAX_CLASSES,
    MAX_CONTENT_DIM,
    POE_SPREAD_TOLERANCE,
    SCALING_DIMS,
    kl_agreement,
    kl_scaling,
    poe_check,
    random_shape,
    structured_cholesky_error,
    violation_report,
    violation_threshold,
)
from rcg_uda.prior import RcgParams
from rcg_uda.tensor_math import Rng
from rcg_uda.util import format_cell


def test_violation_report_rows(chain_params: Callable[..., RcgParams]) -> None:
    rows = violation_report(chain_params(4, 2, ratio=3.0), 100_000, Rng(6))
    assert [(r.pair, r.dim) for r in rows] == [(1, 0), (1, 1), (2, 0), (2, 1), (3, 0), (3, 1)]
    assert all(r.passed for r in rows)
    assert all(r.expected == pytest.approx(norm.cdf(-3)) for r in rows)


def test_violation_threshold_adds_margin() -> None:
    assert norm.cdf(-2) < violation_threshold(2.0, 100_000) < norm.cdf(-2) + 0.002


def test_structured_cholesky(rng: Rng) -> None:
    assert structured_cholesky_error(rng, draws=20) < CHOL_TOLERANCE


def test_kl_agreement(rng: Rng) -> None:
    rows = kl_agreement(rng, configs=3, n=200_000)
    assert len(rows) == 3
    assert all(row.closed_form > 0 for row in rows)
    assert all(row.passed for row in rows), rows


def test_kl_scaling_covers_every_dimension(rng: Rng) -> None:
    report = kl_scaling(rng, repeats=3)
    assert [row.content_dim for row in report.rows] == list(SCALING_DIMS)
    assert all(row.seconds > 0 for row in report.rows)
    assert 0.0 <= report.r_squared <= 1.0


def test_poe_check(rng: Rng) -> None:
    assert poe_check(rng, sets=10) < POE_SPREAD_TOLERANCE


def test_violation_flags_are_plain_booleans() -> None:
    rows = violation_report(RcgParams.initial(3, 1), 10_000, Rng(1))
    assert all(type(row.passed) is bool for row in rows)
    assert {format_cell(row.passed) for row in rows} <= {"true", "false"}


def test_format_cell_numpy_booleans() -> None:
    assert format_cell(np.bool_(True)) == "true"
    assert format_cell(np.float64(3.0) < 1.0) == "false"


def test_random_shapes_cover_validation_range() -> None:
    rng = Rng(0)
    shapes = [random_shape(rng) for _ in range(200)]
    assert {k for k, _ in shapes} == set(range(2, MAX_CLASSES + 1))
    assert {d for _, d in shapes} == set(range(1, MAX_CONTENT_DIM + 1))
    assert (MAX_CLASSES, MAX_CONTENT_DIM) == (6, 8)
