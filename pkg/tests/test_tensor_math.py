from pathlib import Path

import numpy as np
import pytest

from rcg_uda.exception import (
    DomainError,
    FactorizationError,
    ShapeError,
    SingularMatrixError,
)
from rcg_uda.tensor_math import (
    Rng,
    SpdMatrix,
    as_matrix,
    as_vector,
    cholesky,
    logdet_from_chol,
    normal_draws,
    read_csv,
    solve_lower,
    write_csv,
)

CHAIN_COV = [[1.0, 1.0, 1.0], [1.0, 2.0, 2.0], [1.0, 2.0, 3.0]]
UNIT_LOWER = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]]


class TestCholesky:
    def test_identity(self) -> None:
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_chain_covariance(self) -> None:
        np.testing.assert_allclose(cholesky(CHAIN_COV), UNIT_LOWER, atol=1e-15)

    def test_scalar(self) -> None:
        np.testing.assert_array_equal(cholesky([[4.0]]), [[2.0]])

    def test_reproduces_input(self, rng: Rng) -> None:
        a = rng.normal((5, 5))
        m = a @ a.T + 5 * np.eye(5)
        lower = cholesky(m)
        np.testing.assert_allclose(lower @ lower.T, m, rtol=1e-12)
        assert np.all(np.triu(lower, 1) == 0)

    def test_indefinite_names_pivot(self) -> None:
        with pytest.raises(FactorizationError) as exc:
            cholesky([[1.0, 2.0], [2.0, 1.0]])
        assert exc.value.pivot == 1

    def test_rejects_non_square(self) -> None:
        with pytest.raises(ShapeError):
            cholesky(np.ones((2, 3)))


class TestSolveLower:
    def test_identity(self) -> None:
        np.testing.assert_array_equal(solve_lower(np.eye(3), [1.0, 2.0, 3.0]), [1, 2, 3])

    def test_forward_substitution(self) -> None:
        np.testing.assert_allclose(solve_lower([[2.0, 0.0], [1.0, 1.0]], [2.0, 2.0]), [1, 1])

    def test_matrix_right_hand_side(self) -> None:
        x = solve_lower(UNIT_LOWER, np.eye(3))
        np.testing.assert_allclose(np.asarray(UNIT_LOWER) @ x, np.eye(3), atol=1e-15)

    def test_singular(self) -> None:
        with pytest.raises(SingularMatrixError) as exc:
            solve_lower([[1.0, 0.0], [0.0, 0.0]], [1.0, 1.0])
        assert exc.value.index == 1

    def test_length_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            solve_lower(np.eye(2), [1.0, 2.0, 3.0])


@pytest.mark.parametrize(
    ("lower", "expected"),
    [
        (np.eye(4), 0.0),
        (UNIT_LOWER, 0.0),
        ([[2.0]], 2 * np.log(2)),
    ],
)
def test_logdet_from_chol(lower: object, expected: float) -> None:
    assert logdet_from_chol(lower) == pytest.approx(expected, abs=1e-15)


def test_logdet_rejects_non_positive_diagonal() -> None:
    with pytest.raises(DomainError):
        logdet_from_chol([[1.0, 0.0], [3.0, -1.0]])


def test_spd_matrix_caches_factor() -> None:
    spd = SpdMatrix(np.asarray(CHAIN_COV))
    assert spd.chol is spd.chol
    assert spd.size == 3
    assert spd.logdet() == pytest.approx(0.0, abs=1e-14)


def test_spd_matrix_rejects_asymmetric() -> None:
    with pytest.raises(DomainError):
        SpdMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))


def test_validators_reject_empty_and_non_finite() -> None:
    with pytest.raises(ShapeError):
        as_vector([])
    with pytest.raises(DomainError):
        as_vector([1.0, np.nan])
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])
    with pytest.raises(DomainError):
        as_matrix([[np.inf]])


class TestNormalDraws:
    def test_same_seed_same_stream(self) -> None:
        np.testing.assert_array_equal(normal_draws(Rng(7), 3), normal_draws(Rng(7), 3))

    def test_children_are_seeded_by_offset(self) -> None:
        np.testing.assert_array_equal(Rng(7).child(2).normal(4), Rng(9).normal(4))

    def test_moments(self) -> None:
        draws = normal_draws(Rng(11), 1_000_000)
        assert -0.01 < draws.mean() < 0.01
        assert 0.99 < draws.var() < 1.01

    def test_rejects_empty(self) -> None:
        with pytest.raises(DomainError):
            normal_draws(Rng(1), 0)


def test_csv_keeps_full_precision(tmp_path: Path) -> None:
    values = np.array([[0.1, 1 / 3], [np.pi, -2.5e-300]])
    write_csv(tmp_path / "m.csv", values)
    assert "0.10000000000000001" in (tmp_path / "m.csv").read_text()
    np.testing.assert_array_equal(read_csv(tmp_path / "m.csv"), values)
