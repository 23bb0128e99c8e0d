"""Numerical self-checks behind the ``prior-check`` and ``kl-validate`` commands."""

import logging
import time
from typing import NamedTuple

import numpy as np
from scipy.stats import linregress, norm

from rcg_uda.prior import (
    RcgParams,
    build_joint,
    expected_violation_rate,
    poset_violation_rate,
)
from rcg_uda.tensor_math import Rng, SpdMatrix
from rcg_uda.variational import (
    DiagGaussian,
    GroupPosterior,
    kl_content,
    kl_content_mc,
    poe_fuse,
)

logger = logging.getLogger(__name__)

KL_REL_TOLERANCE = 0.02
SCALING_DIMS = (8, 16, 32, 64)
MIN_R_SQUARED = 0.95
POE_SPREAD_TOLERANCE = 1e-8
CHOL_TOLERANCE = 1e-10
VIOLATION_SE_MARGIN = 4.0
# random configurations span K in 2..MAX_CLASSES and D in 1..MAX_CONTENT_DIM
MAX_CLASSES = 6
MAX_CONTENT_DIM = 8


def random_params(rng: Rng, num_classes: int, content_dim: int, sigma_rule: float = 3.0) -> RcgParams:
    shape = (content_dim, num_classes - 1)
    return RcgParams(
        mu1=rng.normal(content_dim),
        delta_raw=0.5 * rng.normal(shape),
        sigma_raw=rng.normal(shape),
        sigma_rule=sigma_rule,
    )


def random_shape(rng: Rng) -> tuple[int, int]:
    return 2 + int(rng.integers(MAX_CLASSES - 1)), 1 + int(rng.integers(MAX_CONTENT_DIM))


class ViolationRow(NamedTuple):
    pair: int
    dim: int
    rate: float
    expected: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.rate <= self.threshold)


def violation_threshold(sigma_rule: float, n: int) -> float:
    """``Phi(-m)`` plus a 4 standard-error Monte Carlo margin."""
    p = float(norm.cdf(-sigma_rule))
    return float(p + VIOLATION_SE_MARGIN * np.sqrt(p * (1.0 - p) / n))


def violation_report(params: RcgParams, n: int, rng: Rng, threads: int = 1) -> list[ViolationRow]:
    """Per adjacent pair ``k -> k+1`` (1-based ``pair = k``) and dimension."""
    rates = poset_violation_rate(params, n, rng, threads)
    expected = expected_violation_rate(params)
    threshold = violation_threshold(params.sigma_rule, n)
    return [
        ViolationRow(k + 1, d, float(rates[k, d]), float(expected[k, d]), threshold)
        for k in range(rates.shape[0])
        for d in range(rates.shape[1])
    ]


def structured_cholesky_error(rng: Rng, draws: int = 100) -> float:
    """Largest gap between the closed-form factor and a generic Cholesky."""
    worst = 0.0
    for _ in range(draws):
        k, d = random_shape(rng)
        joint = build_joint(random_params(rng, k, d))
        for dim in range(d):
            worst = max(worst, float(np.max(np.abs(SpdMatrix(joint.cov[dim]).chol - joint.chol[dim]))))
    return worst


def random_group(rng: Rng, params: RcgParams) -> GroupPosterior:
    """One member per class around the prior mean."""
    joint = build_joint(params)
    k, d = params.num_classes, params.content_dim
    members = DiagGaussian(
        joint.mean.T + rng.normal((k, d)),
        rng.uniform(-1.5, 0.0, (k, d)),
    )
    return GroupPosterior.fuse(members, np.arange(k), k)


class KlRow(NamedTuple):
    config: int
    num_classes: int
    content_dim: int
    closed_form: float
    monte_carlo: float

    @property
    def rel_error(self) -> float:
        return abs(self.closed_form - self.monte_carlo) / abs(self.closed_form)

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < KL_REL_TOLERANCE)


def kl_agreement(rng: Rng, configs: int = 20, n: int = 200_000) -> list[KlRow]:
    rows = []
    for index in range(configs):
        k, d = random_shape(rng)
        params = random_params(rng, k, d)
        group = random_group(rng, params)
        joint = build_joint(params)
        rows.append(
            KlRow(index, k, d, kl_content(group, joint), kl_content_mc(group, joint, n, rng))
        )
    return rows


class ScalingRow(NamedTuple):
    content_dim: int
    seconds: float


class ScalingReport(NamedTuple):
    rows: list[ScalingRow]
    r_squared: float

    @property
    def passed(self) -> bool:
        return bool(self.r_squared > MIN_R_SQUARED)


def kl_scaling(rng: Rng, num_classes: int = 5, repeats: int = 30) -> ScalingReport:
    """Median wall time of :func:`kl_content` per content dimension, with a linear fit."""
    rows = []
    for d in SCALING_DIMS:
        params = random_params(rng, num_classes, d)
        group = random_group(rng, params)
        joint = build_joint(params)
        timings = []
        for _ in range(repeats):
            start = time.perf_counter()
            kl_content(group, joint)
            timings.append(time.perf_counter() - start)
        rows.append(ScalingRow(d, float(np.median(timings))))
    fit = linregress([r.content_dim for r in rows], [r.seconds for r in rows])
    return ScalingReport(rows, float(fit.rvalue**2))


def poe_ratio_spread(rng: Rng, experts: int, dim: int, points: int = 10) -> float:
    """Relative spread of ``sum_n log q_n(x) - log q(x)`` over random ``x``.

    The product of Gaussian experts is proportional to the fused Gaussian, so
    the spread is zero up to rounding.
    """
    members = [
        DiagGaussian(rng.normal(dim), rng.uniform(-1.0, 1.0, dim)) for _ in range(experts)
    ]
    fused = poe_fuse(members)
    x = fused.mean + rng.normal((points, dim))
    ratio = sum(m.log_density(x) for m in members) - fused.log_density(x)
    return float((np.max(ratio) - np.min(ratio)) / max(1.0, float(np.mean(np.abs(ratio)))))


def poe_check(rng: Rng, sets: int = 50) -> float:
    """Worst :func:`poe_ratio_spread` over ``sets`` random expert sets."""
    worst = 0.0
    for _ in range(sets):
        worst = max(worst, poe_ratio_spread(rng, 2 + int(rng.integers(5)), 1 + int(rng.integers(4))))
    logger.debug("PoE density-ratio spread %.3g", worst)
    return worst
