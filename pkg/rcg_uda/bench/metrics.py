"""Ordinal classification metrics over a confusion matrix."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from sklearn.metrics import confusion_matrix

from rcg_uda.exception import DomainError, ShapeError


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]``: samples of true class ``i`` predicted as ``j``."""

    counts: NDArray[np.int64]

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError("confusion matrix", "(K, K)", counts.shape)
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise DomainError("confusion counts must be non-negative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @classmethod
    def from_predictions(
        cls, truth: ArrayLike, predicted: ArrayLike, num_classes: int
    ) -> "ConfusionMatrix":
        return cls(confusion_matrix(truth, predicted, labels=np.arange(num_classes)))

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _require_samples(self) -> None:
        if self.total == 0:
            raise DomainError("confusion matrix is empty")


def accuracy(conf: ConfusionMatrix) -> float:
    conf._require_samples()
    return float(np.trace(conf.counts) / conf.total)


def _distance(k: int) -> NDArray[np.int64]:
    idx = np.arange(k)
    return np.abs(idx[:, None] - idx[None, :])


def mae(conf: ConfusionMatrix) -> float:
    """Mean absolute class distance ``sum counts_ij |i - j| / total``.

    Examples:
        >>> mae(ConfusionMatrix.from_predictions([0, 2, 0], [0, 1, 2], 3))
        1.0
    """
    conf._require_samples()
    return float(np.sum(conf.counts * _distance(conf.num_classes)) / conf.total)


def qwk(conf: ConfusionMatrix) -> float:
    """Quadratic weighted kappa; 0 when the expected weighted disagreement is 0."""
    conf._require_samples()
    k = conf.num_classes
    if k < 2:
        raise DomainError("QWK needs at least two classes")
    observed = conf.counts.astype(np.float64)
    weights = _distance(k) ** 2 / (k - 1) ** 2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / conf.total
    denominator = float(np.sum(weights * expected))
    if denominator == 0:
        return 0.0
    return 1.0 - float(np.sum(weights * observed)) / denominator


class PredictionSummary(NamedTuple):
    """Mean softmax vector over a sample set and its mass near the truth."""

    mean_probs: NDArray[np.float64]
    concentration: float


def prediction_distribution(probs: ArrayLike, truth: ArrayLike) -> PredictionSummary:
    """Average predicted distribution and the mean probability on ``truth +- 1``."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(truth, dtype=np.int64)
    if p.ndim != 2 or p.shape[0] == 0 or y.shape != (p.shape[0],):
        raise ShapeError("prediction distribution", ("N", "K"), p.shape)
    near = np.abs(np.arange(p.shape[1])[None, :] - y[:, None]) <= 1
    return PredictionSummary(
        mean_probs=p.mean(axis=0), concentration=float(np.mean(np.sum(p * near, axis=1)))
    )


class Scores(NamedTuple):
    accuracy: float
    mae: float
    qwk: float


def score(truth: ArrayLike, predicted: ArrayLike, num_classes: int) -> Scores:
    conf = ConfusionMatrix.from_predictions(truth, predicted, num_classes)
    return Scores(accuracy(conf), mae(conf), qwk(conf))
