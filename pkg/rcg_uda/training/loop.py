import logging
from datetime import UTC, datetime
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from rcg_uda.bench.metrics import score
from rcg_uda.config import TrainConfig
from rcg_uda.neural.layers import GaussianHead, Mlp
from rcg_uda.neural.losses import predict_proba
from rcg_uda.neural.optim import Adam
from rcg_uda.tensor_math import Rng
from rcg_uda.training.groups import TrainingData, draw_group_batch
from rcg_uda.training.networks import Networks
from rcg_uda.training.pseudo import PseudoLabelSet, pseudo_label
from rcg_uda.training.schedule import Phase, PhaseSchedule
from rcg_uda.training.step import TERMS, LossReport, train_step

logger = logging.getLogger(__name__)


class Prediction(NamedTuple):
    labels: NDArray[np.int64]
    probs: NDArray[np.float64]


def predict(enc_c: GaussianHead, cls: Mlp, x: ArrayLike) -> Prediction:
    """Classify the content-posterior means; consumes no randomness."""
    probs = predict_proba(cls.forward(enc_c.forward(x).mean))
    return Prediction(labels=np.argmax(probs, axis=-1), probs=probs)


class EpochRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int
    round: int
    phase: Phase
    learning_rate: float
    losses: dict[str, float]
    accuracy: float | None = None
    mae: float | None = None
    qwk: float | None = None


class RoundRecord(BaseModel):
    """One line of the JSON-lines run log; ``timestamp`` is the only volatile field."""

    model_config = ConfigDict(frozen=True)

    round: int
    portion: float
    labeled: int
    class_counts: list[int]
    fallback_classes: list[int]
    accuracy: float | None = None
    mae: float | None = None
    qwk: float | None = None
    timestamp: str


class SelfTrainer:
    """Source warm-up followed by pseudo-label self-training rounds.

    Round ``r`` relabels the target set with ``portions[r - 1]`` (recomputed,
    never accumulated) and then runs ``epochs_per_round`` epochs over
    class-complete groups drawn from source and pseudo-labeled target rows.
    """

    def __init__(
        self,
        nets: Networks,
        config: TrainConfig,
        data: TrainingData,
        rng: Rng | None = None,
        progress: bool = False,
    ) -> None:
        self.nets = nets
        self.config = config
        self.data = data
        self.rng = rng if rng is not None else Rng(config.seed)
        self.progress = progress
        self.optimizer = Adam(learning_rate=config.learning_rate)
        self.portions = config.portion_schedule()
        self.pseudo: PseudoLabelSet | None = None
        self.epoch = 0
        self.epochs: list[EpochRecord] = []
        self.rounds: list[RoundRecord] = []
        self.schedule = PhaseSchedule(
            config.rounds, on_labeling=self._relabel, on_adapting=self._adapt
        )

    @property
    def steps_per_epoch(self) -> int:
        cfg = self.config
        per_step = self.nets.num_classes * cfg.group_size * cfg.groups_per_step
        return max(1, self.data.source_x.shape[0] // per_step)

    def fit(self) -> Networks:
        logger.info(
            "Training: %d warm-up epochs, %d rounds x %d epochs, %d steps/epoch",
            self.config.warmup_epochs,
            self.config.rounds,
            self.config.epochs_per_round,
            self.steps_per_epoch,
        )
        self._run_epochs(self.config.warmup_epochs, round_index=0, phase=Phase.WARMUP)
        self._record_round(0, portion=0.0)
        self.schedule.run()
        return self.nets

    def _relabel(self, round_index: int) -> None:
        portion = self.portions[round_index - 1]
        if self.data.target_y is not None:
            revealed = np.asarray(self.data.target_y, dtype=np.int64)
            self.pseudo = PseudoLabelSet(revealed, np.ones(revealed.size))
        else:
            probs = predict(self.nets.enc_c, self.nets.cls, self.data.target_x).probs
            self.pseudo = pseudo_label(probs, portion)
        counts = self.pseudo.class_counts(self.nets.num_classes)
        logger.info(
            "Round %d: %d/%d targets pseudo-labeled (portion %.3g), per class %s",
            round_index,
            self.pseudo.count,
            self.data.target_x.shape[0],
            portion,
            counts,
        )
        if missing := [k for k, c in enumerate(counts) if c == 0]:
            logger.info(
                "Round %d: no pseudo-labeled targets for classes %s, "
                "their groups use source rows only",
                round_index,
                missing,
            )

    def _adapt(self, round_index: int) -> None:
        self._run_epochs(self.config.epochs_per_round, round_index, Phase.ADAPTING)
        self._record_round(round_index, self.portions[round_index - 1])

    def _run_epochs(self, count: int, round_index: int, phase: Phase) -> None:
        desc = f"{phase.value} r{round_index}"
        for _ in tqdm(range(count), desc=desc, disable=not self.progress, leave=False):
            self.epochs.append(self._run_epoch(round_index, phase))

    def _run_epoch(self, round_index: int, phase: Phase) -> EpochRecord:
        cfg = self.config
        lr = cfg.learning_rate_at(self.epoch)
        self.optimizer.set_learning_rate(lr)
        totals = dict.fromkeys(TERMS, 0.0)
        steps = self.steps_per_epoch
        for _ in range(steps):
            batch = draw_group_batch(
                self.data.source_x,
                self.data.source_y,
                self.data.target_x,
                self.pseudo,
                self.nets.num_classes,
                cfg.group_size,
                cfg.groups_per_step,
                self.rng,
            )
            report: LossReport = train_step(batch, self.nets, self.optimizer, cfg, self.rng)
            for term, value in report._asdict().items():
                totals[term] += value / steps
        record = EpochRecord(
            epoch=self.epoch,
            round=round_index,
            phase=phase,
            learning_rate=lr,
            losses=totals,
            **self.evaluate(),
        )
        logger.debug("Epoch %d: %s", self.epoch, record.losses)
        self.epoch += 1
        return record

    def evaluate(self) -> dict[str, float]:
        """Accuracy / MAE / QWK on the held-out target set, if any."""
        if self.data.eval_x is None or self.data.eval_y is None:
            return {}
        predicted = predict(self.nets.enc_c, self.nets.cls, self.data.eval_x).labels
        return score(self.data.eval_y, predicted, self.nets.num_classes)._asdict()

    def _record_round(self, round_index: int, portion: float) -> None:
        k = self.nets.num_classes
        counts = self.pseudo.class_counts(k) if self.pseudo is not None else [0] * k
        fallback = [c for c, n in enumerate(counts) if n == 0] if round_index else []
        self.rounds.append(
            RoundRecord(
                round=round_index,
                portion=portion,
                labeled=sum(counts),
                class_counts=counts,
                fallback_classes=fallback,
                timestamp=datetime.now(UTC).isoformat(),
                **self.evaluate(),
            )
        )
