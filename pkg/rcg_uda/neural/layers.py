import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from rcg_uda.exception import MissingCacheError, ShapeError
from rcg_uda.tensor_math import Rng
from rcg_uda.variational import DiagGaussian, clamp_mask

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]


class Activation(StrEnum):
    TANH = "tanh"
    RELU = "relu"
    LINEAR = "linear"
    SIGMOID = "sigmoid"

    def apply(self, z: Array) -> Array:
        match self:
            case Activation.TANH:
                return np.tanh(z)
            case Activation.RELU:
                return np.maximum(z, 0.0)
            case Activation.SIGMOID:
                return 0.5 * (1.0 + np.tanh(0.5 * z))
            case _:
                return z

    def derivative(self, out: Array) -> Array:
        """Derivative expressed through the activation output."""
        match self:
            case Activation.TANH:
                return 1.0 - out**2
            case Activation.RELU:
                return (out > 0).astype(np.float64)
            case Activation.SIGMOID:
                return out * (1.0 - out)
            case _:
                return np.ones_like(out)


@dataclass
class Dense:
    """Affine map ``x @ weight.T + bias`` followed by an activation."""

    weight: Array
    bias: Array
    activation: Activation = Activation.LINEAR

    @classmethod
    def init(
        cls, fan_in: int, fan_out: int, activation: Activation, rng: Rng
    ) -> "Dense":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return cls(
            weight=rng.uniform(-limit, limit, (fan_out, fan_in)),
            bias=np.zeros(fan_out),
            activation=activation,
        )

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])


class MlpGrads(NamedTuple):
    params: dict[str, Array]
    input: Array


class Mlp:
    """Stack of :class:`Dense` layers with an exact reverse pass.

    ``forward`` accepts a batch ``(N, in_dim)`` or a single vector and keeps the
    activations of the most recent call; ``backward`` reuses them and may be
    called several times for the same forward pass.
    """

    def __init__(self, layers: Sequence[Dense]) -> None:
        if not layers:
            raise ShapeError("Mlp", "at least one layer", 0)
        for prev, nxt in zip(layers, layers[1:], strict=False):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError("Mlp layer chain", prev.out_dim, nxt.in_dim)
        self.layers = list(layers)
        self._cache: list[tuple[Array, Array]] | None = None
        self._squeeze = False

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        rng: Rng,
        hidden: Activation = Activation.TANH,
        output: Activation = Activation.LINEAR,
    ) -> "Mlp":
        """Xavier-uniform initialized network with layer widths ``sizes``."""
        last = len(sizes) - 2
        return cls([
            Dense.init(fan_in, fan_out, output if i == last else hidden, rng)
            for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:], strict=False))
        ])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: ArrayLike) -> Array:
        inputs = np.asarray(x, dtype=np.float64)
        self._squeeze = inputs.ndim == 1
        batch = np.atleast_2d(inputs)
        if batch.ndim != 2 or batch.shape[1] != self.in_dim:
            raise ShapeError("Mlp input", ("N", self.in_dim), inputs.shape)
        cache = []
        for layer in self.layers:
            out = layer.activation.apply(batch @ layer.weight.T + layer.bias)
            cache.append((batch, out))
            batch = out
        self._cache = cache
        return batch[0] if self._squeeze else batch

    __call__ = forward

    def backward(self, upstream: ArrayLike) -> MlpGrads:
        """Gradients of ``sum(upstream * output)`` for the cached forward pass."""
        if self._cache is None:
            raise MissingCacheError()
        grad = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        if grad.shape != self._cache[-1][1].shape:
            raise ShapeError("Mlp upstream", self._cache[-1][1].shape, grad.shape)
        params: dict[str, Array] = {}
        for index in reversed(range(len(self.layers))):
            layer = self.layers[index]
            inputs, out = self._cache[index]
            grad_z = grad * layer.activation.derivative(out)
            params[f"{index}.weight"] = grad_z.T @ inputs
            params[f"{index}.bias"] = grad_z.sum(axis=0)
            grad = grad_z @ layer.weight
        return MlpGrads(params=params, input=grad[0] if self._squeeze else grad)

    def parameters(self) -> dict[str, Array]:
        """Live references to every weight and bias, keyed ``"<layer>.<kind>"``."""
        params: dict[str, Array] = {}
        for index, layer in enumerate(self.layers):
            params[f"{index}.weight"] = layer.weight
            params[f"{index}.bias"] = layer.bias
        return params

    def __repr__(self) -> str:
        dims = [self.in_dim] + [layer.out_dim for layer in self.layers]
        acts = ",".join(layer.activation.value for layer in self.layers)
        return f"Mlp({dims}, activations=[{acts}])"


class GaussianHead:
    """Shared body with affine mean and log-variance heads."""

    def __init__(self, body: Mlp, mean_head: Mlp, logvar_head: Mlp) -> None:
        if mean_head.in_dim != body.out_dim or logvar_head.in_dim != body.out_dim:
            raise ShapeError("GaussianHead heads", body.out_dim, mean_head.in_dim)
        self.body = body
        self.mean_head = mean_head
        self.logvar_head = logvar_head
        self._raw_logvar: Array | None = None

    @classmethod
    def build(
        cls,
        in_dim: int,
        hidden: Sequence[int],
        out_dim: int,
        rng: Rng,
        activation: Activation = Activation.TANH,
    ) -> "GaussianHead":
        body = Mlp.build([in_dim, *hidden], rng, hidden=activation, output=activation)
        return cls(
            body=body,
            mean_head=Mlp.build([body.out_dim, out_dim], rng),
            logvar_head=Mlp.build([body.out_dim, out_dim], rng),
        )

    @property
    def in_dim(self) -> int:
        return self.body.in_dim

    @property
    def out_dim(self) -> int:
        return self.mean_head.out_dim

    def forward(self, x: ArrayLike) -> DiagGaussian:
        features = self.body.forward(x)
        self._raw_logvar = self.logvar_head.forward(features)
        return DiagGaussian(self.mean_head.forward(features), self._raw_logvar)

    __call__ = forward

    def backward(self, grad_mean: Array, grad_logvar: Array) -> MlpGrads:
        if self._raw_logvar is None:
            raise MissingCacheError()
        mean_grads = self.mean_head.backward(grad_mean)
        logvar_grads = self.logvar_head.backward(
            grad_logvar * clamp_mask(self._raw_logvar)
        )
        body_grads = self.body.backward(mean_grads.input + logvar_grads.input)
        params = {f"body.{k}": v for k, v in body_grads.params.items()}
        params.update({f"mean.{k}": v for k, v in mean_grads.params.items()})
        params.update({f"logvar.{k}": v for k, v in logvar_grads.params.items()})
        return MlpGrads(params=params, input=body_grads.input)

    def parameters(self) -> dict[str, Array]:
        params = {f"body.{k}": v for k, v in self.body.parameters().items()}
        params.update({f"mean.{k}": v for k, v in self.mean_head.parameters().items()})
        params.update(
            {f"logvar.{k}": v for k, v in self.logvar_head.parameters().items()}
        )
        return params
