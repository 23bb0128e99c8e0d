import json
import tomllib
from enum import StrEnum
from pathlib import Path
from typing import Any, NewType

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from rcg_uda.exception import ConfigError

Seed = NewType("Seed", int)

FORMAT_VERSION = 1


class PriorKind(StrEnum):
    RCG = "rcg"
    IID_GAUSSIAN = "iid_gaussian"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class PriorConfig(_Section):
    """Serialized RCG parameters.

    ``K`` and ``D`` default to the data / network sizes; ``sigma_rule`` defaults
    to ``train.sigma_rule``. Missing parameter arrays are filled by
    :meth:`rcg_uda.prior.RcgParams.initial`.
    """

    num_classes: int | None = Field(default=None, alias="K", ge=1)
    content_dim: int | None = Field(default=None, alias="D", ge=1)
    sigma_rule: float | None = Field(default=None, gt=0)
    mu1: list[float] | None = None
    delta_raw: list[list[float]] | None = None
    sigma_raw: list[list[float]] | None = None


class SynthSpec(_Section):
    """Synthetic cross-domain ordinal benchmark settings."""

    num_classes: int = Field(default=5, alias="K", ge=2)
    content_dim: int = Field(default=4, gt=0)
    style_dim: int = Field(default=4, gt=0)
    obs_dim: int = Field(default=32, gt=0)
    samples_per_class: int = Field(default=40, gt=0)
    test_samples_per_class: int = Field(default=20, gt=0)
    domain_shift_scale: float = Field(default=0.5, ge=0)
    label_noise_rate: float = Field(default=0.0, ge=0, lt=0.5)
    content_jitter: float = Field(default=0.1, ge=0)
    obs_noise: float = Field(default=0.05, ge=0)
    seed: int = 0


class NetworkConfig(_Section):
    content_dim: int = Field(default=4, gt=0)
    style_dim: int = Field(default=4, gt=0)
    encoder_hidden: list[int] = Field(default_factory=lambda: [64, 64])
    classifier_hidden: list[int] = Field(default_factory=lambda: [32])
    discriminator_hidden: list[int] = Field(default_factory=lambda: [64, 64])
    activation: str = "tanh"

    @field_validator("activation")
    @classmethod
    def _known_activation(cls, value: str) -> str:
        if value not in {"tanh", "relu", "sigmoid", "linear"}:
            raise ValueError(f"unknown activation '{value}'")
        return value


class TrainConfig(_Section):
    """Loss weights, schedule and optimizer settings of the adaptation run."""

    alpha: float = Field(default=1.0, ge=0)
    beta: float = Field(default=0.5, ge=0)
    gamma: float = Field(default=0.5, ge=0)
    lambda_: float = Field(default=1.0, alias="lambda", ge=0)
    theta: float = Field(default=1.0, ge=0)
    ce_weight: float = Field(default=1.0, ge=0)
    sigma_rule: float = Field(default=3.0, gt=0)
    prior_kind: PriorKind = PriorKind.RCG
    adversarial_enabled: bool = True
    freeze_prior: bool = False
    rounds: int = Field(default=3, ge=0)
    warmup_epochs: int = Field(default=10, ge=0)
    epochs_per_round: int = Field(default=10, ge=0)
    groups_per_step: int = Field(default=2, gt=0)
    group_size: int = Field(default=4, gt=0)
    portions: list[float] | None = None
    learning_rate: float = Field(default=1e-3, gt=0)
    lr_decay: float = Field(default=0.1, gt=0, le=1)
    lr_decay_every: int = Field(default=0, ge=0)
    seed: int = 0

    @field_validator("portions")
    @classmethod
    def _check_portions(cls, value: list[float] | None) -> list[float] | None:
        if value is None:
            return value
        if any(not 0 < p <= 1 for p in value):
            raise ValueError("selection portions must lie in (0, 1]")
        if any(b < a for a, b in zip(value, value[1:], strict=False)):
            raise ValueError("selection portions must be non-decreasing")
        return value

    @model_validator(mode="after")
    def _portions_cover_rounds(self) -> "TrainConfig":
        if self.portions is not None and len(self.portions) < self.rounds:
            raise ValueError(
                f"{len(self.portions)} portions given for {self.rounds} rounds"
            )
        return self

    def portion_schedule(self) -> list[float]:
        """Per-round selection portions; defaults to 0.2 -> 0.5 linearly."""
        if self.portions is not None:
            return list(self.portions[: self.rounds])
        if self.rounds == 1:
            return [0.5]
        step = 0.3 / max(self.rounds - 1, 1)
        return [round(0.2 + step * r, 12) for r in range(self.rounds)]

    def learning_rate_at(self, epoch: int) -> float:
        if not self.lr_decay_every:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)


class RunConfig(_Section):
    """Top-level run configuration (one TOML file)."""

    format_version: int = FORMAT_VERSION
    prior: PriorConfig = Field(default_factory=PriorConfig)
    data: SynthSpec = Field(default_factory=SynthSpec)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @field_validator("format_version")
    @classmethod
    def _supported_version(cls, value: int) -> int:
        if value != FORMAT_VERSION:
            raise ValueError(
                f"unsupported format_version {value}, expected {FORMAT_VERSION}"
            )
        return value

    @model_validator(mode="after")
    def _consistent_sizes(self) -> "RunConfig":
        if self.network.content_dim != self.data.content_dim:
            raise ValueError(
                "network.content_dim must equal data.content_dim "
                f"({self.network.content_dim} != {self.data.content_dim})"
            )
        if self.prior.num_classes not in {None, self.data.num_classes}:
            raise ValueError("prior.K must equal data.K")
        if self.prior.content_dim not in {None, self.network.content_dim}:
            raise ValueError("prior.D must equal network.content_dim")
        return self

    @property
    def sigma_rule(self) -> float:
        if self.prior.sigma_rule is not None:
            return self.prior.sigma_rule
        return self.train.sigma_rule

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        """Read and validate a TOML (or, for ``*.json``, JSON) run configuration.

        Raises:
            ConfigError: On unreadable files, syntax errors, unknown keys or
                invalid values. ``key`` names the offending entry.
        """
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
            raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
        except OSError as e:
            raise ConfigError(str(path), f"cannot read config: {e}") from e
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(str(path), f"invalid syntax: {e}") from e
        return cls.from_mapping(raw)

    def dump_json(self, path: str | Path) -> None:
        """Write the configuration in a form :meth:`load` reads back."""
        Path(path).write_text(
            self.model_dump_json(by_alias=True, exclude_none=True, indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_mapping(cls, raw: dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(part) for part in first["loc"]) or "<root>"
            raise ConfigError(key, first["msg"]) from e

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with both the data and the training seed replaced."""
        return self.model_copy(
            update={
                "data": self.data.model_copy(update={"seed": seed}),
                "train": self.train.model_copy(update={"seed": seed}),
            }
        )
