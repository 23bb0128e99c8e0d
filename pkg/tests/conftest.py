from collections.abc import Callable

import numpy as np
import pytest

from rcg_uda.config import RunConfig
from rcg_uda.prior import RcgParams
from rcg_uda.tensor_math import Rng


@pytest.fixture
def rng() -> Rng:
    return Rng(20240611)


@pytest.fixture
def chain_params() -> Callable[..., RcgParams]:
    """Chain with equal spacing ``delta`` and ``delta / sigma = ratio`` for k >= 2."""

    def _factory(
        num_classes: int = 3,
        content_dim: int = 1,
        delta: float = 3.0,
        ratio: float = 3.0,
        mu1: float = 0.0,
    ) -> RcgParams:
        shape = (content_dim, num_classes - 1)
        return RcgParams(
            mu1=np.full(content_dim, mu1),
            delta_raw=np.full(shape, np.log(delta)),
            sigma_raw=np.full(shape, np.inf),
            sigma_rule=ratio,
        )

    return _factory


@pytest.fixture
def tiny_config() -> RunConfig:
    """A run small enough to train in well under a second."""
    return RunConfig.from_mapping({
        "data": {
            "K": 3,
            "content_dim": 2,
            "style_dim": 2,
            "obs_dim": 8,
            "samples_per_class": 12,
            "test_samples_per_class": 6,
            "seed": 3,
        },
        "network": {
            "content_dim": 2,
            "style_dim": 2,
            "encoder_hidden": [8],
            "classifier_hidden": [4],
            "discriminator_hidden": [8],
        },
        "train": {
            "rounds": 2,
            "warmup_epochs": 2,
            "epochs_per_round": 1,
            "group_size": 2,
            "groups_per_step": 2,
            "seed": 3,
        },
    })
