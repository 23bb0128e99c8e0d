"""Scalar losses with their analytic gradients.

Every function returns ``(value, grad)`` (or a named tuple carrying both) so the
training step can scale and route the gradient without a computation graph.
"""

from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import log_softmax, softmax

from rcg_uda.exception import DomainError, ShapeError
from rcg_uda.neural.layers import Mlp

Array = NDArray[np.float64]

PROB_CLIP = 1e-12


def predict_proba(logits: ArrayLike) -> Array:
    return softmax(np.asarray(logits, dtype=np.float64), axis=-1)


def cross_entropy(logits: ArrayLike, labels: ArrayLike) -> tuple[float, Array]:
    """Mean ``-log softmax(logits)[label]`` over the batch and its gradient.

    ``logits`` is ``(K,)`` with a scalar label or ``(N, K)`` with ``(N,)``
    labels, 0-based.

    Examples:
        >>> value, grad = cross_entropy(np.zeros(5), 0)
        >>> round(value, 4), abs(float(grad.sum())) < 1e-12
        (1.6094, True)
    """
    scores = np.asarray(logits, dtype=np.float64)
    single = scores.ndim == 1
    batch = np.atleast_2d(scores)
    targets = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if targets.shape != batch.shape[:1]:
        raise ShapeError("cross_entropy labels", batch.shape[:1], targets.shape)
    k = batch.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise DomainError(f"class labels must lie in 0..{k - 1}")
    n = batch.shape[0]
    log_p = log_softmax(batch, axis=1)
    rows = np.arange(n)
    value = -float(np.mean(log_p[rows, targets]))
    grad = np.exp(log_p)
    grad[rows, targets] -= 1.0
    grad /= n
    return value, grad[0] if single else grad


def l1_loss(
    target: ArrayLike, recon: ArrayLike, normalizer: float | None = None
) -> tuple[float, Array]:
    """``sum |target - recon| / normalizer`` and its gradient w.r.t. ``recon``.

    The normalizer defaults to the number of rows. The subgradient at zero
    residual is 0.
    """
    x = np.asarray(target, dtype=np.float64)
    x_hat = np.asarray(recon, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError("l1 reconstruction", x.shape, x_hat.shape)
    scale = float(normalizer if normalizer is not None else np.atleast_2d(x).shape[0])
    resid = x_hat - x
    return float(np.sum(np.abs(resid)) / scale), np.sign(resid) / scale


class AdversarialLosses(NamedTuple):
    """Discriminator and generator objectives for one domain.

    ``dis_grads`` are the discriminator parameter gradients of
    ``discriminator``; ``fake_grad`` is the gradient of ``generator`` w.r.t.
    the fake batch (it never touches the discriminator parameters).
    """

    generator: float
    discriminator: float
    dis_grads: dict[str, Array]
    fake_grad: Array


def _neg_log(p: Array) -> tuple[Array, Array]:
    clipped = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return -np.log(clipped), -1.0 / clipped


def adversarial_losses(dis: Mlp, real: ArrayLike, fake: ArrayLike) -> AdversarialLosses:
    """Non-saturating GAN objectives; ``dis`` ends in a single sigmoid unit.

    discriminator = mean(-log D(real)) + mean(-log(1 - D(fake)))
    generator = mean(-log D(fake))
    """
    if dis.out_dim != 1:
        raise ShapeError("discriminator output", 1, dis.out_dim)
    real_p = dis.forward(real)
    n_real = real_p.shape[0]
    real_loss, real_grad = _neg_log(real_p)
    real_grads = dis.backward(real_grad / n_real).params

    fake_p = dis.forward(fake)
    n_fake = fake_p.shape[0]
    fake_loss, fake_upstream = _neg_log(1.0 - fake_p)
    fake_grads = dis.backward(-fake_upstream / n_fake).params
    gen_loss, gen_upstream = _neg_log(fake_p)
    fake_grad = dis.backward(gen_upstream / n_fake).input

    return AdversarialLosses(
        generator=float(np.mean(gen_loss)),
        discriminator=float(np.mean(real_loss) + np.mean(fake_loss)),
        dis_grads={name: real_grads[name] + fake_grads[name] for name in real_grads},
        fake_grad=fake_grad,
    )
