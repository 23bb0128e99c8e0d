"""Dense linear-algebra kernel and the seeded random stream.

Everything is ``float64`` numpy arrays. ``Vector`` and ``Matrix`` are plain
aliases; :func:`as_vector` / :func:`as_matrix` validate the invariants
(non-empty, finite, right rank) at the library boundary.

Random numbers come from :class:`Rng`, a thin wrapper around
``numpy.random.Generator`` driven by the ``PCG64`` bit generator (64-bit
permuted congruential generator). Standard-normal draws use numpy's ziggurat
transform, so a given seed yields the same stream on every platform.
"""

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import lapack, solve_triangular

from rcg_uda.exception import (
    DomainError,
    FactorizationError,
    ShapeError,
    SingularMatrixError,
)

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

SYMMETRY_TOL = 1e-12


def as_vector(values: ArrayLike) -> Vector:
    """Validate and convert ``values`` to a non-empty finite 1-d array."""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 1 or array.size == 0:
        raise ShapeError("vector", "(n,) with n > 0", array.shape)
    if not np.all(np.isfinite(array)):
        raise DomainError("vector entries must be finite")
    return array


def as_matrix(values: ArrayLike) -> Matrix:
    """Validate and convert ``values`` to a non-empty finite 2-d array."""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 2 or array.size == 0:
        raise ShapeError("matrix", "(rows, cols) with rows*cols > 0", array.shape)
    if not np.all(np.isfinite(array)):
        raise DomainError("matrix entries must be finite")
    return array


class Rng:
    """Seeded PCG64 stream.

    One instance per worker; workers derive their own stream with
    :meth:`child` (seed ``seed + index``).
    """

    def __init__(self, seed: int) -> None:
        self._seed = int(seed)
        self._generator = np.random.Generator(np.random.PCG64(self._seed))

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def child(self, index: int) -> "Rng":
        return Rng(self._seed + index)

    def normal(self, shape: int | tuple[int, ...]) -> NDArray[np.float64]:
        return self._generator.standard_normal(shape)

    def uniform(
        self, low: float, high: float, shape: int | tuple[int, ...]
    ) -> NDArray[np.float64]:
        return self._generator.uniform(low, high, shape)

    def integers(
        self, high: int, shape: int | tuple[int, ...] | None = None
    ) -> Any:
        return self._generator.integers(0, high, shape)

    def choice(self, pool: NDArray[Any], size: int, replace: bool) -> NDArray[Any]:
        return self._generator.choice(pool, size=size, replace=replace)

    def permutation(self, n: int) -> NDArray[np.int64]:
        return self._generator.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self._seed})"


@dataclass(frozen=True)
class SpdMatrix:
    """Symmetric positive-definite matrix with a lazily computed Cholesky factor."""

    base: Matrix

    def __post_init__(self) -> None:
        base = as_matrix(self.base)
        if base.shape[0] != base.shape[1]:
            raise ShapeError("SPD matrix", "square", base.shape)
        if np.max(np.abs(base - base.T)) > SYMMETRY_TOL:
            raise DomainError("SPD matrix must be symmetric within 1e-12")
        object.__setattr__(self, "base", base)

    @cached_property
    def chol(self) -> Matrix:
        return cholesky(self.base)

    @property
    def size(self) -> int:
        return int(self.base.shape[0])

    def logdet(self) -> float:
        return logdet_from_chol(self.chol)


def cholesky(m: ArrayLike) -> Matrix:
    """Lower Cholesky factor ``L`` with ``L @ L.T == m``.

    Examples:
        >>> cholesky([[4.0]])
        array([[2.]])

    Raises:
        FactorizationError: ``m`` is not positive definite; ``pivot`` is the
            0-based index of the first non-positive pivot.
    """
    matrix = as_matrix(m)
    if matrix.shape[0] != matrix.shape[1]:
        raise ShapeError("cholesky input", "square", matrix.shape)
    factor, info = lapack.dpotrf(matrix, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(pivot=info - 1)
    if info < 0:
        raise DomainError(f"dpotrf rejected argument {-info}")
    return np.tril(factor)


def _check_lower_diagonal(lower: Matrix) -> None:
    diag = np.diag(lower)
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        raise SingularMatrixError(int(bad[0]))


def solve_lower(lower: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    """Forward substitution: return ``x`` with ``lower @ x == b``.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    factor = as_matrix(lower)
    rhs = np.asarray(b, dtype=np.float64)
    if factor.shape[0] != factor.shape[1] or rhs.shape[0] != factor.shape[0]:
        raise ShapeError("solve_lower", (factor.shape[0],), rhs.shape)
    _check_lower_diagonal(factor)
    return solve_triangular(factor, rhs, lower=True, check_finite=False)


def logdet_from_chol(lower: ArrayLike) -> float:
    """``log det(L @ L.T) = 2 * sum(log diag(L))``."""
    factor = as_matrix(lower)
    diag = np.diag(factor)
    if np.any(diag <= 0):
        raise DomainError("log-determinant needs a strictly positive diagonal")
    return float(2.0 * np.sum(np.log(diag)))


def normal_draws(rng: Rng, n: int) -> Vector:
    if n <= 0:
        raise DomainError(f"need n > 0 draws, got {n}")
    return rng.normal(n)


def write_csv(path: str | Path, values: ArrayLike) -> None:
    """Dump a vector or matrix as CSV: one row per line, no header."""
    array = np.atleast_2d(np.asarray(values, dtype=np.float64))
    np.savetxt(path, array, delimiter=",", fmt="%.17g")


def read_csv(path: str | Path) -> Matrix:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2))
