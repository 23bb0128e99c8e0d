"""Central finite-difference gradient checking."""

from collections.abc import Callable, Mapping
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

STEP = 1e-5
ERROR_FLOOR = 1e-3
TOLERANCE = 1e-4


class GradcheckResult(NamedTuple):
    name: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < TOLERANCE)


def numerical_gradient(
    loss: Callable[[], float], param: Array, step: float = STEP
) -> Array:
    """Central differences of ``loss`` w.r.t. every entry of ``param``.

    ``param`` is perturbed in place and restored after each entry.
    """
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        upper = loss()
        flat[i] = saved - step
        lower = loss()
        flat[i] = saved
        out[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: Array, numeric: Array, floor: float = ERROR_FLOOR) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries.

    Examples:
        >>> relative_error(np.array([1.0]), np.array([1.0]))
        0.0
    """
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(
    loss: Callable[[], float],
    params: Mapping[str, Array],
    analytic: Mapping[str, Array],
    step: float = STEP,
) -> list[GradcheckResult]:
    """Compare ``analytic`` gradients with finite differences, one result per name.

    Names missing from ``analytic`` are expected to have zero gradient.
    """
    results = []
    for name, param in params.items():
        numeric = numerical_gradient(loss, param, step)
        expected = analytic.get(name, np.zeros_like(param))
        results.append(GradcheckResult(name, relative_error(expected, numeric)))
    return results
