"""Recursively conditional Gaussian (RCG) ordinal prior.

Per content dimension ``d`` the class anchors form a chain::

    c_1 ~ N(mu1, 1)
    c_k | c_{k-1} ~ N(c_{k-1} + delta_k, sigma_k^2),   k = 2..K

with ``delta_k = exp(delta_raw_k)`` and
``sigma_k = delta_k / m * sigmoid(sigma_raw_k)``, so ``delta_k >= m * sigma_k``
holds for any raw value (``m`` is the sigma rule). The chain is a single
K-variate Gaussian per dimension with mean ``a_k = mu1 + delta_2 + ... + delta_k``
and covariance ``C_ij = sigma_1^2 + ... + sigma_min(i,j)^2``; its Cholesky
factor is known in closed form (``L_ij = sigma_j`` for ``j <= i``).

Arrays are laid out with the dimension axis first: ``delta_raw`` and
``sigma_raw`` are ``(D, K-1)`` (column ``j`` holds class ``j + 2``), joint means
are ``(D, K)`` and covariances ``(D, K, K)``. Anchor matrices ``c`` are
``(K, D)``, one row per class.
"""

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit
from scipy.stats import norm

from rcg_uda.config import PriorConfig
from rcg_uda.exception import ConfigError, DomainError, ShapeError
from rcg_uda.tensor_math import Matrix, Rng, Vector, solve_lower

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
MIN_VIOLATION_SAMPLES = 10_000


def _config_array(
    key: str, given: object, default: NDArray[np.float64], shape: tuple[int, ...]
) -> NDArray[np.float64]:
    if given is None:
        return default
    array = np.asarray(given, dtype=np.float64)
    if array.shape != shape:
        raise ConfigError(f"prior.{key}", f"expected shape {shape}, got {array.shape}")
    return array


@dataclass(frozen=True)
class RcgParams:
    """Free parameters of the RCG prior (an immutable snapshot)."""

    mu1: Vector
    delta_raw: Matrix
    sigma_raw: Matrix
    sigma_rule: float = 3.0

    def __post_init__(self) -> None:
        mu1 = np.array(self.mu1, dtype=np.float64, ndmin=1)
        delta_raw = np.array(self.delta_raw, dtype=np.float64, ndmin=2)
        sigma_raw = np.array(self.sigma_raw, dtype=np.float64, ndmin=2)
        if mu1.ndim != 1:
            raise ShapeError("mu1", "(D,)", mu1.shape)
        if delta_raw.shape != sigma_raw.shape or delta_raw.shape[0] != mu1.shape[0]:
            raise ShapeError(
                "delta_raw/sigma_raw", (mu1.shape[0], "K-1"), delta_raw.shape
            )
        if self.sigma_rule <= 0:
            raise DomainError(f"sigma_rule must be positive, got {self.sigma_rule}")
        if np.any(np.isnan(delta_raw)) or np.any(np.isnan(sigma_raw)):
            raise DomainError("raw prior parameters must not be NaN")
        for array in (mu1, delta_raw, sigma_raw):
            array.setflags(write=False)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "delta_raw", delta_raw)
        object.__setattr__(self, "sigma_raw", sigma_raw)

    @classmethod
    def initial(
        cls,
        num_classes: int,
        content_dim: int,
        sigma_rule: float = 3.0,
        delta: float = 1.0,
    ) -> "RcgParams":
        """Centered chain with spacing ``delta`` and ``sigma_k = delta / (2m)``."""
        mu1 = np.full(content_dim, -0.5 * (num_classes - 1) * delta)
        raw_shape = (content_dim, num_classes - 1)
        return cls(
            mu1=mu1,
            delta_raw=np.full(raw_shape, np.log(delta)),
            sigma_raw=np.zeros(raw_shape),
            sigma_rule=sigma_rule,
        )

    @classmethod
    def from_config(
        cls,
        config: PriorConfig,
        num_classes: int,
        content_dim: int,
        sigma_rule: float,
    ) -> "RcgParams":
        base = cls.initial(num_classes, content_dim, sigma_rule)
        raw_shape = (content_dim, num_classes - 1)
        return cls(
            mu1=_config_array("mu1", config.mu1, base.mu1, (content_dim,)),
            delta_raw=_config_array("delta_raw", config.delta_raw, base.delta_raw, raw_shape),
            sigma_raw=_config_array("sigma_raw", config.sigma_raw, base.sigma_raw, raw_shape),
            sigma_rule=sigma_rule,
        )

    def to_config(self) -> PriorConfig:
        return PriorConfig(
            K=self.num_classes,
            D=self.content_dim,
            sigma_rule=self.sigma_rule,
            mu1=self.mu1.tolist(),
            delta_raw=self.delta_raw.tolist(),
            sigma_raw=self.sigma_raw.tolist(),
        )

    @property
    def num_classes(self) -> int:
        return int(self.delta_raw.shape[1]) + 1

    @property
    def content_dim(self) -> int:
        return int(self.mu1.shape[0])

    @property
    def delta(self) -> Matrix:
        """Constrained spreads ``(D, K-1)``, strictly positive."""
        return np.exp(self.delta_raw)

    @property
    def gate(self) -> Matrix:
        return expit(self.sigma_raw)

    @property
    def sigma(self) -> Matrix:
        """Conditional standard deviations ``(D, K)``; column 0 is ``sigma_1 = 1``."""
        tail = self.delta / self.sigma_rule * self.gate
        return np.concatenate([np.ones((self.content_dim, 1)), tail], axis=1)


class JointGaussianChain(NamedTuple):
    """Per-dimension joint Gaussian: means ``(D, K)``, covariances and factors ``(D, K, K)``."""

    mean: Matrix
    cov: NDArray[np.float64]
    chol: NDArray[np.float64]

    @property
    def num_classes(self) -> int:
        return int(self.mean.shape[1])

    @property
    def content_dim(self) -> int:
        return int(self.mean.shape[0])

    @classmethod
    def iid(cls, num_classes: int, content_dim: int) -> "JointGaussianChain":
        """Fully factorized ``N(0, I)`` prior over all class anchors."""
        eye = np.broadcast_to(np.eye(num_classes), (content_dim, num_classes, num_classes))
        return cls(
            mean=np.zeros((content_dim, num_classes)),
            cov=eye.copy(),
            chol=eye.copy(),
        )


class PriorSample(NamedTuple):
    c: Matrix


class RcgGrads(NamedTuple):
    mu1: Vector
    delta_raw: Matrix
    sigma_raw: Matrix


def build_joint(params: RcgParams) -> JointGaussianChain:
    k = params.num_classes
    sigma = params.sigma
    offsets = np.concatenate(
        [np.zeros((params.content_dim, 1)), np.cumsum(params.delta, axis=1)], axis=1
    )
    mean = params.mu1[:, None] + offsets
    cumvar = np.cumsum(sigma**2, axis=1)
    idx = np.arange(k)
    cov = cumvar[:, np.minimum.outer(idx, idx)]
    chol = np.tril(np.broadcast_to(sigma[:, None, :], (params.content_dim, k, k)))
    return JointGaussianChain(mean=mean, cov=cov, chol=chol)


def joint_backward(
    params: RcgParams, grad_mean: Matrix, grad_cov: NDArray[np.float64]
) -> RcgGrads:
    """Pull gradients w.r.t. the joint mean/covariance back to the raw parameters.

    ``grad_cov`` treats every covariance entry as independent (pass the full,
    symmetric gradient matrix).
    """
    delta = params.delta
    sigma = params.sigma[:, 1:]
    gate = params.gate

    g_mu1 = grad_mean.sum(axis=1)
    # a_k depends on delta_l for every l <= k
    g_delta = np.flip(np.cumsum(np.flip(grad_mean[:, 1:], axis=1), axis=1), axis=1)

    # C_ij depends on sigma_l^2 for every l <= min(i, j)
    tail_sums = np.flip(
        np.cumsum(np.cumsum(np.flip(grad_cov, axis=(1, 2)), axis=1), axis=2),
        axis=(1, 2),
    )
    g_var = np.diagonal(tail_sums, axis1=1, axis2=2)[:, 1:]
    g_sigma = 2.0 * sigma * g_var

    g_delta_raw = g_delta * delta + g_sigma * sigma
    g_sigma_raw = g_sigma * delta / params.sigma_rule * gate * (1.0 - gate)
    return RcgGrads(mu1=g_mu1, delta_raw=g_delta_raw, sigma_raw=g_sigma_raw)


def sample_chains(params: RcgParams, rng: Rng, n: int) -> NDArray[np.float64]:
    """Draw ``n`` anchor sets ``(n, K, D)`` by the sequential conditional scheme."""
    sigma = params.sigma
    delta = params.delta
    noise = rng.normal((n, params.num_classes, params.content_dim))
    draws = np.empty_like(noise)
    draws[:, 0, :] = params.mu1 + sigma[:, 0] * noise[:, 0, :]
    for k in range(1, params.num_classes):
        draws[:, k, :] = draws[:, k - 1, :] + delta[:, k - 1] + sigma[:, k] * noise[:, k, :]
    return draws


def sample_chain(params: RcgParams, rng: Rng) -> PriorSample:
    return PriorSample(c=sample_chains(params, rng, 1)[0])


def _check_anchor_shape(c: NDArray[np.float64], k: int, d: int) -> None:
    if c.shape != (k, d):
        raise ShapeError("anchor matrix", (k, d), c.shape)


def log_density(joint: JointGaussianChain, c: ArrayLike) -> float:
    """``sum_d log N(c[:, d]; a_d, C_d)`` through triangular solves."""
    anchors = np.asarray(c, dtype=np.float64)
    k, d = joint.num_classes, joint.content_dim
    _check_anchor_shape(anchors, k, d)
    total = 0.0
    for dim in range(d):
        chol = joint.chol[dim]
        z = solve_lower(chol, anchors[:, dim] - joint.mean[dim])
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        total -= 0.5 * (z @ z + k * LOG_2PI + logdet)
    return float(total)


def chain_log_density(params: RcgParams, c: ArrayLike) -> float:
    """Same density evaluated as ``log p(c_1) + sum_k log p(c_k | c_{k-1})``."""
    anchors = np.asarray(c, dtype=np.float64)
    _check_anchor_shape(anchors, params.num_classes, params.content_dim)
    sigma = params.sigma
    total = norm.logpdf(anchors[0], loc=params.mu1, scale=sigma[:, 0]).sum()
    loc = anchors[:-1] + params.delta.T
    total += norm.logpdf(anchors[1:], loc=loc, scale=sigma[:, 1:].T).sum()
    return float(total)


def default_threads() -> int:
    """Worker cap from ``RCG_THREADS`` (default 1 for determinism)."""
    try:
        return max(1, int(os.environ.get("RCG_THREADS", "1")))
    except ValueError:
        logger.warning("Ignoring malformed RCG_THREADS=%r", os.environ["RCG_THREADS"])
        return 1


def _violation_counts(params: RcgParams, rng: Rng, n: int) -> NDArray[np.int64]:
    draws = sample_chains(params, rng, n)
    return np.sum(draws[:, 1:, :] <= draws[:, :-1, :], axis=0)


def poset_violation_rate(
    params: RcgParams, n: int, rng: Rng, threads: int = 1
) -> Matrix:
    """Fraction of draws with ``c_k <= c_{k-1}``, per adjacent pair and dimension.

    Returns a ``(K-1, D)`` matrix. With ``threads > 1`` the draws are split into
    equal chunks, worker ``i`` uses ``rng.child(i)`` and counts are summed in
    worker order.
    """
    if n < MIN_VIOLATION_SAMPLES:
        raise DomainError(f"need at least {MIN_VIOLATION_SAMPLES} draws, got {n}")
    if threads <= 1:
        counts = _violation_counts(params, rng, n)
    else:
        sizes = [n // threads + (1 if i < n % threads else 0) for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(
                pool.map(
                    lambda i: _violation_counts(params, rng.child(i), sizes[i]),
                    range(threads),
                )
            )
        counts = np.sum(parts, axis=0)
    return counts / n


def expected_violation_rate(params: RcgParams) -> Matrix:
    """One-sided ``Phi(-delta_k / sigma_k)`` per adjacent pair, ``(K-1, D)``."""
    # sigma_k = 0 gives an infinite ratio, i.e. rate 0
    with np.errstate(divide="ignore"):
        ratio = params.delta / params.sigma[:, 1:]
    return norm.cdf(-ratio).T


def triplet_check(c: ArrayLike) -> bool:
    """``|c_i - c_k| > max(|c_i - c_j|, |c_j - c_k|)`` for every ``i < j < k``."""
    anchors = np.asarray(c, dtype=np.float64)
    if anchors.ndim != 2 or anchors.shape[0] < 3:
        raise DomainError("triplet check needs K >= 3 anchor rows")
    diff = anchors[:, None, :] - anchors[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    return all(
        dist[i, k] > max(dist[i, j], dist[j, k])
        for i, j, k in itertools.combinations(range(anchors.shape[0]), 3)
    )


def is_poset_aligned(c: ArrayLike) -> bool:
    """Every dimension strictly increasing from class to class."""
    anchors = np.asarray(c, dtype=np.float64)
    return bool(np.all(np.diff(anchors, axis=0) > 0))


class MomentReport(NamedTuple):
    """Largest deviations of Monte Carlo moments, in standard errors."""

    max_mean_z: float
    max_cov_z: float


def moment_check(params: RcgParams, n: int, rng: Rng) -> MomentReport:
    joint = build_joint(params)
    draws = sample_chains(params, rng, n)
    centered = draws - draws.mean(axis=0)

    mean_err = np.abs(draws.mean(axis=0) - joint.mean.T)
    mean_se = draws.std(axis=0, ddof=1) / np.sqrt(n)

    # (n, D, K, K) outer products would be large; loop over dimensions
    cov_z = 0.0
    for d in range(params.content_dim):
        x = centered[:, :, d]
        prods = x[:, :, None] * x[:, None, :]
        emp = prods.mean(axis=0) * n / (n - 1)
        se = prods.std(axis=0, ddof=1) / np.sqrt(n)
        cov_z = max(cov_z, float(np.max(np.abs(emp - joint.cov[d]) / se)))
    return MomentReport(
        max_mean_z=float(np.max(mean_err / mean_se)), max_cov_z=cov_z
    )
