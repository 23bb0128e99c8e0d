import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from rcg_uda.exception import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]


@dataclass
class _Moments:
    first: Array
    second: Array
    steps: int = 0


@dataclass
class Adam:
    """Adam with per-parameter bias correction.

    Parameters are updated in place. Moment buffers are keyed by parameter
    name, so a parameter that receives no gradient in a step keeps its state.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _state: dict[str, _Moments] = field(default_factory=dict, repr=False)

    def set_learning_rate(self, value: float) -> None:
        if value != self.learning_rate:
            logger.debug("Learning rate %g -> %g", self.learning_rate, value)
        self.learning_rate = value

    def step(self, params: dict[str, Array], grads: dict[str, Array]) -> None:
        """Apply one update to every parameter named in ``grads``.

        Raises:
            NonFiniteError: A gradient holds NaN/inf; nothing is updated.
            ShapeError: A gradient does not match its parameter.
        """
        for name, grad in grads.items():
            if name not in params:
                raise KeyError(f"gradient for unknown parameter '{name}'")
            if grad.shape != params[name].shape:
                raise ShapeError(name, params[name].shape, grad.shape)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(name)

        for name, grad in grads.items():
            state = self._state.get(name)
            if state is None:
                state = _Moments(np.zeros_like(grad), np.zeros_like(grad))
                self._state[name] = state
            state.steps += 1
            state.first *= self.beta1
            state.first += (1.0 - self.beta1) * grad
            state.second *= self.beta2
            state.second += (1.0 - self.beta2) * grad**2
            first_hat = state.first / (1.0 - self.beta1**state.steps)
            second_hat = state.second / (1.0 - self.beta2**state.steps)
            params[name] -= self.learning_rate * first_hat / (np.sqrt(second_hat) + self.eps)
