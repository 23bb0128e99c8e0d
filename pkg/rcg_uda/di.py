from typing import NewType

from dishka import Container, Provider, Scope, from_context, make_container, provide

from rcg_uda.bench.data import SynthDataset, generate
from rcg_uda.config import RunConfig, Seed
from rcg_uda.prior import RcgParams
from rcg_uda.tensor_math import Rng
from rcg_uda.training.loop import SelfTrainer
from rcg_uda.training.networks import Networks, make_networks

ShowProgress = NewType("ShowProgress", bool)


class RcgUdaProvider(Provider):
    """Builds the objects of one run from its configuration and seed.

    ``Seed`` drives network initialization (stream ``seed``) and training
    (stream ``seed + 1``); the dataset uses ``config.data.seed``.
    """

    scope = Scope.APP

    config = from_context(provides=RunConfig)
    seed = from_context(provides=Seed)
    progress = from_context(provides=ShowProgress)

    @provide
    def prior(self, config: RunConfig) -> RcgParams:
        return RcgParams.from_config(
            config.prior,
            config.data.num_classes,
            config.network.content_dim,
            config.sigma_rule,
        )

    @provide
    def dataset(self, config: RunConfig) -> SynthDataset:
        return generate(config.data)

    @provide
    def networks(self, config: RunConfig, seed: Seed) -> Networks:
        return make_networks(config, Rng(seed))

    @provide
    def trainer(
        self,
        config: RunConfig,
        seed: Seed,
        nets: Networks,
        dataset: SynthDataset,
        progress: ShowProgress,
    ) -> SelfTrainer:
        return SelfTrainer(
            nets,
            config.train,
            dataset.training_view(),
            Rng(seed).child(1),
            progress=progress,
        )


def make_run_container(config: RunConfig, progress: bool = False) -> Container:
    """Container for one run seeded by ``config.train.seed``; close it when done."""
    return make_container(
        RcgUdaProvider(),
        context={
            RunConfig: config,
            Seed: Seed(config.train.seed),
            ShowProgress: ShowProgress(progress),
        },
    )
