"""Synthetic two-domain ordinal benchmark.

Generative story per sample of class ``y``::

    content = c_y + content_jitter * N(0, I)
    style   ~ N(0, I)
    x       = tanh(A_dom @ [content; style] + b_dom) + obs_noise * N(0, I)

Class anchors ``c`` come from an RCG chain with spacing 3 and unit conditional
deviation, redrawn until strictly increasing in every dimension and used as
drawn: adjacent classes sit about 3 apart against the 0.1 jitter. The target
mixing perturbs the content columns of the source mixing by
``domain_shift_scale``, rotates the style columns by a random orthogonal
matrix and shifts the bias.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from rcg_uda.config import SynthSpec
from rcg_uda.exception import CheckpointError, DomainError
from rcg_uda.prior import RcgParams, is_poset_aligned, sample_chain
from rcg_uda.tensor_math import Rng, read_csv, write_csv
from rcg_uda.training.groups import TrainingData
from rcg_uda.training.pseudo import UNLABELED

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]
Labels = NDArray[np.int64]

ANCHOR_SPACING = 3.0
MAX_ANCHOR_DRAWS = 1000


@dataclass(frozen=True)
class DomainSplit:
    x: Array
    y: Labels

    def __len__(self) -> int:
        return int(self.x.shape[0])


@dataclass(frozen=True)
class Mixing:
    weight: Array
    bias: Array


@dataclass(frozen=True)
class SynthDataset:
    """Generated benchmark; target-train labels are kept private.

    :meth:`training_view` is what a trainer gets; only
    :meth:`supervised_view` reveals the target-train labels.
    """

    spec: SynthSpec
    anchors: Array
    source: DomainSplit
    target_train_x: Array
    target_test: DomainSplit
    _target_train_y: Labels | None = field(default=None, repr=False)

    def training_view(self) -> TrainingData:
        return TrainingData(
            source_x=self.source.x,
            source_y=self.source.y,
            target_x=self.target_train_x,
            eval_x=self.target_test.x,
            eval_y=self.target_test.y,
        )

    def supervised_view(self) -> TrainingData:
        if self._target_train_y is None:
            raise DomainError("target-train labels are not available for this dataset")
        return TrainingData(
            source_x=self.source.x,
            source_y=self.source.y,
            target_x=self.target_train_x,
            target_y=self._target_train_y,
            eval_x=self.target_test.x,
            eval_y=self.target_test.y,
        )


def anchor_chain(num_classes: int, content_dim: int) -> RcgParams:
    """Ground-truth chain: spacing 3, unit deviations, centered first class."""
    shape = (content_dim, num_classes - 1)
    return RcgParams(
        mu1=np.full(content_dim, -0.5 * (num_classes - 1) * ANCHOR_SPACING),
        delta_raw=np.full(shape, np.log(ANCHOR_SPACING)),
        sigma_raw=np.full(shape, np.inf),
        sigma_rule=ANCHOR_SPACING,
    )


def draw_anchors(num_classes: int, content_dim: int, rng: Rng) -> Array:
    params = anchor_chain(num_classes, content_dim)
    for attempt in range(1, MAX_ANCHOR_DRAWS + 1):
        anchors = sample_chain(params, rng).c
        if is_poset_aligned(anchors):
            logger.debug("Anchors aligned after %d draw(s)", attempt)
            return anchors
    raise DomainError(f"no poset-aligned anchors in {MAX_ANCHOR_DRAWS} draws")


def _random_rotation(dim: int, rng: Rng) -> Array:
    q, r = np.linalg.qr(rng.normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _mixings(spec: SynthSpec, rng: Rng) -> tuple[Mixing, Mixing]:
    dc, du = spec.content_dim, spec.style_dim
    latent = dc + du
    weight = rng.normal((spec.obs_dim, latent)) / np.sqrt(latent)
    bias = 0.1 * rng.normal(spec.obs_dim)
    shifted = weight.copy()
    shifted[:, :dc] += spec.domain_shift_scale * rng.normal((spec.obs_dim, dc)) / np.sqrt(latent)
    shifted[:, dc:] = weight[:, dc:] @ _random_rotation(du, rng)
    target_bias = bias + spec.domain_shift_scale * rng.normal(spec.obs_dim)
    return Mixing(weight, bias), Mixing(shifted, target_bias)


def _observe(
    spec: SynthSpec, anchors: Array, mixing: Mixing, per_class: int, rng: Rng
) -> DomainSplit:
    labels = np.repeat(np.arange(spec.num_classes), per_class)
    content = anchors[labels] + spec.content_jitter * rng.normal((labels.size, spec.content_dim))
    style = rng.normal((labels.size, spec.style_dim))
    latent = np.hstack([content, style])
    x = np.tanh(latent @ mixing.weight.T + mixing.bias)
    x += spec.obs_noise * rng.normal(x.shape)
    return DomainSplit(x=x, y=labels)


def _corrupt(labels: Labels, rate: float, num_classes: int, rng: Rng) -> Labels:
    flip = rng.uniform(0.0, 1.0, labels.size) < rate
    step = np.where(rng.uniform(0.0, 1.0, labels.size) < 0.5, -1, 1)
    noisy = np.clip(labels + flip * step, 0, num_classes - 1)
    logger.debug("Label noise changed %d of %d labels", int(np.sum(noisy != labels)), labels.size)
    return noisy.astype(np.int64)


def generate(spec: SynthSpec) -> SynthDataset:
    """Deterministic in ``spec`` (including ``spec.seed``)."""
    rng = Rng(spec.seed)
    anchors = draw_anchors(spec.num_classes, spec.content_dim, rng)
    source_mix, target_mix = _mixings(spec, rng)
    source = _observe(spec, anchors, source_mix, spec.samples_per_class, rng)
    target_train = _observe(spec, anchors, target_mix, spec.samples_per_class, rng)
    target_test = _observe(spec, anchors, target_mix, spec.test_samples_per_class, rng)
    if spec.label_noise_rate > 0:
        noisy = _corrupt(source.y, spec.label_noise_rate, spec.num_classes, rng)
        source = DomainSplit(source.x, noisy)
    logger.info(
        "Generated %d source, %d target-train, %d target-test rows (K=%d, obs_dim=%d)",
        len(source),
        target_train.x.shape[0],
        len(target_test),
        spec.num_classes,
        spec.obs_dim,
    )
    return SynthDataset(
        spec=spec,
        anchors=anchors,
        source=source,
        target_train_x=target_train.x,
        target_test=target_test,
        _target_train_y=target_train.y,
    )


SPLITS = ("source", "target_train", "target_test")


def save_dataset(dataset: SynthDataset, out_dir: str | Path) -> list[Path]:
    """One CSV per split (observations then label, ``-1`` when hidden) plus
    ``spec.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hidden = np.full(dataset.target_train_x.shape[0], UNLABELED)
    rows = {
        "source": (dataset.source.x, dataset.source.y),
        "target_train": (dataset.target_train_x, hidden),
        "target_test": (dataset.target_test.x, dataset.target_test.y),
    }
    written = []
    for name in SPLITS:
        x, y = rows[name]
        path = out / f"{name}.csv"
        write_csv(path, np.hstack([x, y[:, None]]))
        written.append(path)
    spec_path = out / "spec.json"
    payload = {"spec": dataset.spec.model_dump(by_alias=True), "anchors": dataset.anchors.tolist()}
    spec_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(spec_path)
    return written


def load_dataset(data_dir: str | Path) -> SynthDataset:
    """Read a directory written by :func:`save_dataset`; target-train labels stay hidden."""
    base = Path(data_dir)
    try:
        payload = json.loads((base / "spec.json").read_text(encoding="utf-8"))
        tables = {name: read_csv(base / f"{name}.csv") for name in SPLITS}
    except (OSError, ValueError) as e:
        raise CheckpointError(str(base), f"cannot read dataset: {e}") from e

    def split(name: str) -> DomainSplit:
        table = tables[name]
        return DomainSplit(x=table[:, :-1], y=table[:, -1].astype(np.int64))

    return SynthDataset(
        spec=SynthSpec.model_validate(payload["spec"]),
        anchors=np.asarray(payload["anchors"], dtype=np.float64),
        source=split("source"),
        target_train_x=tables["target_train"][:, :-1],
        target_test=split("target_test"),
    )
