import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from rcg_uda.exception import DomainError

logger = logging.getLogger(__name__)

UNLABELED = -1


@dataclass(frozen=True)
class PseudoLabelSet:
    """Per-target pseudo-labels; ``labels`` is ``UNLABELED`` where not selected.

    ``confidence`` holds the max-softmax score of every target, selected or not.
    """

    labels: NDArray[np.int64]
    confidence: NDArray[np.float64]

    @property
    def selected(self) -> NDArray[np.bool_]:
        return self.labels != UNLABELED

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.selected))

    def class_counts(self, num_classes: int) -> list[int]:
        return np.bincount(self.labels[self.selected], minlength=num_classes).tolist()

    def indices_of(self, k: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.labels == k)


def pseudo_label(probs: ArrayLike, portion: float) -> PseudoLabelSet:
    """Class-balanced selection of confident target predictions.

    For each predicted class with ``n_k`` targets the ``ceil(portion * n_k)``
    most confident ones (max softmax) are labeled; ties go to the lower index.

    Examples:
        >>> probs = np.array([[0.1, 0.9], [0.2, 0.8], [0.4, 0.6], [0.45, 0.55]])
        >>> pseudo_label(probs, 0.5).labels.tolist()
        [1, 1, -1, -1]
    """
    scores = np.asarray(probs, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise DomainError("pseudo-labeling needs a non-empty (N, K) probability matrix")
    if not 0 < portion <= 1:
        raise DomainError(f"selection portion must lie in (0, 1], got {portion}")
    predicted = np.argmax(scores, axis=1)
    confidence = scores[np.arange(scores.shape[0]), predicted]
    labels = np.full(scores.shape[0], UNLABELED, dtype=np.int64)
    for k in np.unique(predicted):
        members = np.flatnonzero(predicted == k)
        # round() keeps 0.35 * 20 from becoming 7.000000000000001
        keep = math.ceil(round(portion * members.size, 9))
        order = np.lexsort((members, -confidence[members]))
        labels[members[order[:keep]]] = k
    return PseudoLabelSet(labels=labels, confidence=confidence)
