import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from rcg_uda.exception import EmptyGroupError, ShapeError
from rcg_uda.tensor_math import Rng
from rcg_uda.training.pseudo import PseudoLabelSet

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]
Labels = NDArray[np.int64]


@dataclass(frozen=True)
class TrainingData:
    """What the trainer may see: labeled source, unlabeled target rows and an
    optional labeled held-out target set used only for reporting.

    ``target_y`` is only set for the supervised upper bound; it then replaces
    the pseudo-labels.
    """

    source_x: Array
    source_y: Labels
    target_x: Array
    target_y: Labels | None = None
    eval_x: Array | None = None
    eval_y: Labels | None = None

    def __post_init__(self) -> None:
        if self.source_y.shape != (self.source_x.shape[0],):
            raise ShapeError("source labels", (self.source_x.shape[0],), self.source_y.shape)
        if self.target_x.ndim != 2 or self.target_x.shape[1] != self.source_x.shape[1]:
            raise ShapeError("target rows", ("N", self.source_x.shape[1]), self.target_x.shape)


@dataclass(frozen=True)
class GroupBatch:
    """``groups_per_step`` class-complete groups, source and target rows stacked.

    ``*_group`` gives each row's group index. Target rows carry pseudo-labels;
    a class with no pseudo-labeled targets is represented by source rows only.
    """

    source_x: Array
    source_y: Labels
    source_group: Labels
    target_x: Array
    target_y: Labels
    target_group: Labels
    num_groups: int
    num_classes: int

    def __post_init__(self) -> None:
        for name, x, y, g in (
            ("source", self.source_x, self.source_y, self.source_group),
            ("target", self.target_x, self.target_y, self.target_group),
        ):
            if y.shape != (x.shape[0],) or g.shape != y.shape:
                raise ShapeError(f"{name} labels/groups", (x.shape[0],), (y.shape, g.shape))

    @property
    def size(self) -> int:
        return int(self.source_x.shape[0] + self.target_x.shape[0])

    @property
    def observations(self) -> Array:
        return np.vstack([self.source_x, self.target_x])

    @property
    def labels(self) -> Labels:
        return np.concatenate([self.source_y, self.target_y])

    @property
    def groups(self) -> Labels:
        return np.concatenate([self.source_group, self.target_group])

    def rows_of_group(self, g: int) -> Labels:
        return np.flatnonzero(self.groups == g)

    def check_complete(self) -> None:
        """Every group needs at least one source row for every class."""
        for g in range(self.num_groups):
            present = set(self.source_y[self.source_group == g].tolist())
            if missing := sorted(set(range(self.num_classes)) - present):
                raise EmptyGroupError(missing)


def _pick(pool: Labels, size: int, rng: Rng) -> Labels:
    return rng.choice(pool, size=size, replace=pool.size < size)


def draw_group_batch(
    source_x: Array,
    source_y: Labels,
    target_x: Array,
    pseudo: PseudoLabelSet | None,
    num_classes: int,
    group_size: int,
    groups_per_step: int,
    rng: Rng,
) -> GroupBatch:
    """Sample ``group_size`` rows per class and domain for each group.

    Classes short of rows are sampled with replacement.

    Raises:
        EmptyGroupError: Some class has no source sample at all.
    """
    src_pools = [np.flatnonzero(source_y == k) for k in range(num_classes)]
    if missing := [k for k, pool in enumerate(src_pools) if pool.size == 0]:
        raise EmptyGroupError(missing)
    tgt_pools = [
        pseudo.indices_of(k) if pseudo is not None else np.empty(0, dtype=np.int64)
        for k in range(num_classes)
    ]

    src_rows, src_groups, tgt_rows, tgt_labels, tgt_groups = [], [], [], [], []
    for g in range(groups_per_step):
        for k in range(num_classes):
            picked = _pick(src_pools[k], group_size, rng)
            src_rows.append(picked)
            src_groups.append(np.full(picked.size, g))
            if tgt_pools[k].size:
                picked = _pick(tgt_pools[k], group_size, rng)
                tgt_rows.append(picked)
                tgt_labels.append(np.full(picked.size, k))
                tgt_groups.append(np.full(picked.size, g))

    src_idx = np.concatenate(src_rows)
    tgt_idx = np.concatenate(tgt_rows) if tgt_rows else np.empty(0, dtype=np.int64)
    return GroupBatch(
        source_x=source_x[src_idx],
        source_y=source_y[src_idx].astype(np.int64),
        source_group=np.concatenate(src_groups).astype(np.int64),
        target_x=target_x[tgt_idx].reshape(tgt_idx.size, source_x.shape[1]),
        target_y=(np.concatenate(tgt_labels) if tgt_labels else np.empty(0)).astype(np.int64),
        target_group=(np.concatenate(tgt_groups) if tgt_groups else np.empty(0)).astype(np.int64),
        num_groups=groups_per_step,
        num_classes=num_classes,
    )
