"""Posterior machinery: diagonal Gaussians, product-of-experts fusion and KLs.

The content KL compares, for each dimension ``d``, the K fused class
posteriors (a diagonal Gaussian ``N(m_d, S_d)``) with the joint prior
``N(a_d, C_d)``::

    KL_d = 1/2 [tr(C_d^-1 S_d) + (a_d - m_d)^T C_d^-1 (a_d - m_d)
                - K + log|C_d| - log|S_d|]

All ``C_d^-1`` products go through triangular solves against the prior's
Cholesky factor, so the cost is ``O(D * K^3)``.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular

from rcg_uda.exception import DomainError, EmptyGroupError, ShapeError
from rcg_uda.prior import LOG_2PI, JointGaussianChain
from rcg_uda.tensor_math import Rng

logger = logging.getLogger(__name__)

LOGVAR_MIN = -20.0
LOGVAR_MAX = 20.0

Array = NDArray[np.float64]


@dataclass(frozen=True)
class DiagGaussian:
    """Diagonal Gaussian; ``mean`` and ``logvar`` share a shape ``(..., D)``.

    ``logvar`` is clamped to ``[-20, 20]`` on construction.
    """

    mean: Array
    logvar: Array

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        logvar = np.asarray(self.logvar, dtype=np.float64)
        if mean.shape != logvar.shape or mean.size == 0:
            raise ShapeError("DiagGaussian logvar", mean.shape, logvar.shape)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "logvar", np.clip(logvar, LOGVAR_MIN, LOGVAR_MAX))

    @classmethod
    def from_variance(cls, mean: ArrayLike, variance: ArrayLike) -> "DiagGaussian":
        return cls(np.asarray(mean, dtype=np.float64), np.log(variance))

    @property
    def variance(self) -> Array:
        return np.exp(self.logvar)

    @property
    def precision(self) -> Array:
        return np.exp(-self.logvar)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[-1])

    def log_density(self, x: ArrayLike) -> Array:
        """Log density summed over the last axis."""
        z = np.asarray(x, dtype=np.float64) - self.mean
        return -0.5 * np.sum(LOG_2PI + self.logvar + z**2 * self.precision, axis=-1)


def clamp_mask(raw_logvar: Array) -> Array:
    """1 where a raw log-variance passes the clamp unchanged, else 0."""
    return ((raw_logvar >= LOGVAR_MIN) & (raw_logvar <= LOGVAR_MAX)).astype(np.float64)


def poe_fuse(members: Sequence[DiagGaussian]) -> DiagGaussian:
    """Product of Gaussian experts: precisions add, means are precision-weighted.

    Examples:
        >>> fused = poe_fuse([DiagGaussian.from_variance([1.0], [1.0]),
        ...                   DiagGaussian.from_variance([3.0], [1.0])])
        >>> float(fused.mean[0]), round(float(fused.variance[0]), 12)
        (2.0, 0.5)
    """
    if not members:
        raise EmptyGroupError([])
    dim = members[0].dim
    if any(m.dim != dim for m in members):
        raise ShapeError("PoE member", (dim,), [m.dim for m in members])
    precision = np.stack([m.precision for m in members])
    mean = np.stack([m.mean for m in members])
    variance = 1.0 / precision.sum(axis=0)
    return DiagGaussian(variance * (precision * mean).sum(axis=0), np.log(variance))


def reparam_from_noise(q: DiagGaussian, eps: ArrayLike) -> Array:
    return q.mean + np.exp(0.5 * q.logvar) * np.asarray(eps, dtype=np.float64)


def reparam_sample(q: DiagGaussian, rng: Rng) -> Array:
    """``mean + exp(logvar / 2) * eps`` with ``eps ~ N(0, I)``."""
    return reparam_from_noise(q, rng.normal(q.mean.shape))


def reparam_backward(
    q: DiagGaussian, eps: Array, grad_sample: Array
) -> tuple[Array, Array]:
    """Gradients of a downstream loss w.r.t. ``(mean, logvar)`` of ``q``."""
    return grad_sample, 0.5 * grad_sample * eps * np.exp(0.5 * q.logvar)


def kl_style(q: DiagGaussian) -> float:
    """``KL(q || N(0, I))`` summed over every entry of ``q``.

    Examples:
        >>> kl_style(DiagGaussian(np.array([1.0]), np.array([0.0])))
        0.5
    """
    variance = q.variance
    return float(0.5 * np.sum(q.mean**2 + variance - 1.0 - q.logvar))


def kl_style_grad(q: DiagGaussian) -> tuple[Array, Array]:
    return q.mean.copy(), 0.5 * (q.variance - 1.0)


def kl_style_mc(q: DiagGaussian, n: int, rng: Rng) -> float:
    """Monte Carlo estimate of :func:`kl_style`, for validation."""
    z = q.mean + np.exp(0.5 * q.logvar) * rng.normal((n, *q.mean.shape))
    log_q = q.log_density(z)
    log_p = -0.5 * np.sum(LOG_2PI + z**2, axis=-1)
    axes = tuple(range(1, log_q.ndim))
    return float(np.mean(np.sum(log_q - log_p, axis=axes) if axes else log_q - log_p))


@dataclass(frozen=True)
class GroupPosterior:
    """Per-class PoE fusion of member content posteriors for one group.

    ``member_mean`` / ``member_logvar`` are ``(N, D)``, ``labels`` ``(N,)`` in
    ``0..K-1``. ``mean`` / ``variance`` are the fused ``(K, D)`` moments; rows of
    classes without members are NaN and listed in :attr:`empty_classes`.
    """

    labels: NDArray[np.int64]
    member_mean: Array
    member_logvar: Array
    mean: Array
    variance: Array
    counts: NDArray[np.int64]

    @classmethod
    def fuse(
        cls, members: DiagGaussian, labels: ArrayLike, num_classes: int
    ) -> "GroupPosterior":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != members.mean.shape[:1]:
            raise ShapeError("group labels", members.mean.shape[:1], labels.shape)
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise DomainError(f"labels must lie in 0..{num_classes - 1}")
        dim = members.dim
        precision = members.precision
        prec_sum = np.zeros((num_classes, dim))
        weighted = np.zeros((num_classes, dim))
        np.add.at(prec_sum, labels, precision)
        np.add.at(weighted, labels, precision * members.mean)
        counts = np.bincount(labels, minlength=num_classes)
        with np.errstate(divide="ignore", invalid="ignore"):
            variance = np.where(counts[:, None] > 0, 1.0 / prec_sum, np.nan)
            mean = np.where(counts[:, None] > 0, weighted * variance, np.nan)
        return cls(
            labels=labels,
            member_mean=members.mean,
            member_logvar=members.logvar,
            mean=mean,
            variance=variance,
            counts=counts,
        )

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def empty_classes(self) -> list[int]:
        return np.flatnonzero(self.counts == 0).tolist()

    def require_complete(self) -> None:
        if empty := self.empty_classes:
            raise EmptyGroupError(empty)

    def backward(self, grad_mean: Array, grad_variance: Array) -> tuple[Array, Array]:
        """Push ``(K, D)`` gradients on the fused moments to the members.

        Returns gradients w.r.t. member ``(mean, logvar)``, each ``(N, D)``.
        """
        precision = np.exp(-self.member_logvar)
        v = self.variance[self.labels]
        mu = self.mean[self.labels]
        g_mean = grad_mean[self.labels]
        g_var = grad_variance[self.labels]
        d_mean = g_mean * precision * v
        d_logvar = -g_mean * precision * v * (self.member_mean - mu)
        d_logvar += g_var * v**2 * precision
        return d_mean, d_logvar


class ContentKlGrads(NamedTuple):
    """Content KL gradients: fused ``mean``/``variance`` ``(K, D)``, prior ``(D, K[, K])``."""

    mean: Array
    variance: Array
    joint_mean: Array
    joint_cov: Array


def _kl_dimension(
    chol: Array, a: Array, m: Array, s: Array, with_grad: bool
) -> tuple[float, tuple[Array, ...] | None]:
    k = a.shape[0]
    inv_chol = solve_triangular(chol, np.eye(k), lower=True, check_finite=False)
    resid = a - m
    z = inv_chol @ resid
    # tr(C^-1 S) = ||L^-1 S^1/2||_F^2
    trace = float(np.sum(inv_chol**2 * s[None, :]))
    logdet_c = 2.0 * float(np.sum(np.log(np.diag(chol))))
    value = 0.5 * (trace + float(z @ z) - k + logdet_c - float(np.sum(np.log(s))))
    if not with_grad:
        return value, None
    c_inv = inv_chol.T @ inv_chol
    c_inv_r = c_inv @ resid
    g_m = -c_inv_r
    g_s = 0.5 * (np.diag(c_inv) - 1.0 / s)
    g_a = c_inv_r
    g_c = 0.5 * (c_inv - c_inv @ (s[:, None] * c_inv) - np.outer(c_inv_r, c_inv_r))
    return value, (g_m, g_s, g_a, g_c)


def kl_content(group: GroupPosterior, joint: JointGaussianChain) -> float:
    value, _ = kl_content_with_grad(group, joint, with_grad=False)
    return value


def kl_content_with_grad(
    group: GroupPosterior, joint: JointGaussianChain, with_grad: bool = True
) -> tuple[float, ContentKlGrads | None]:
    """Closed-form content KL against the joint prior, optionally with gradients.

    Raises:
        EmptyGroupError: Some class has no members in ``group``.
    """
    group.require_complete()
    if group.mean.shape != joint.mean.T.shape:
        raise ShapeError("group posterior", joint.mean.T.shape, group.mean.shape)
    total = 0.0
    grads = [] if with_grad else None
    for d in range(joint.content_dim):
        value, parts = _kl_dimension(
            joint.chol[d], joint.mean[d], group.mean[:, d], group.variance[:, d], with_grad
        )
        total += value
        if grads is not None and parts is not None:
            grads.append(parts)
    if grads is None:
        return total, None
    g_m, g_s, g_a, g_c = (np.stack(part) for part in zip(*grads, strict=True))
    return total, ContentKlGrads(
        mean=g_m.T, variance=g_s.T, joint_mean=g_a, joint_cov=g_c
    )


def kl_content_mc(
    group: GroupPosterior, joint: JointGaussianChain, n: int, rng: Rng
) -> float:
    """Monte Carlo estimate ``E_q[log q - log p]`` of :func:`kl_content`."""
    group.require_complete()
    k = joint.num_classes
    total = 0.0
    for d in range(joint.content_dim):
        m = group.mean[:, d]
        s = group.variance[:, d]
        z = m + np.sqrt(s) * rng.normal((n, k))
        log_q = -0.5 * np.sum(LOG_2PI + np.log(s) + (z - m) ** 2 / s, axis=1)
        chol = joint.chol[d]
        w = solve_triangular(chol, (z - joint.mean[d]).T, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        log_p = -0.5 * (np.sum(w**2, axis=0) + k * LOG_2PI + logdet)
        total += float(np.mean(log_q - log_p))
    return total


def elbo_terms(
    recon_s: float, recon_t: float, kl_u_s: float, kl_u_t: float, kl_c: float
) -> float:
    """ELBO from its reconstruction log-likelihoods and KL terms.

    Examples:
        >>> elbo_terms(-1.0, -1.0, 0.5, 0.5, 1.0)
        -4.0
    """
    return recon_s + recon_t - kl_u_s - kl_u_t - kl_c
