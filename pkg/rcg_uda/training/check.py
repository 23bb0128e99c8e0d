"""Finite-difference check of every routed loss term on tiny random models."""

import logging
from typing import NamedTuple

import numpy as np

from rcg_uda.config import NetworkConfig
from rcg_uda.neural.gradcheck import TOLERANCE, check_gradients
from rcg_uda.prior import RcgParams
from rcg_uda.tensor_math import Rng
from rcg_uda.training.groups import GroupBatch, draw_group_batch
from rcg_uda.training.networks import Networks
from rcg_uda.training.pseudo import PseudoLabelSet
from rcg_uda.training.step import StepGraph, StepNoise, single_term_routing

logger = logging.getLogger(__name__)

# networks each term reaches through the routing matrix
TERM_DESTINATIONS = {
    "ce": ("enc_c", "cls"),
    "kl_c": ("enc_c", "prior"),
    "kl_s": ("enc_u_s",),
    "kl_t": ("enc_u_t",),
    "l1_s": ("enc_c", "enc_u_s", "dec_s"),
    "l1_t": ("enc_c", "enc_u_t", "dec_t"),
    "adv_s": ("enc_c", "enc_u_s", "dec_s"),
    "adv_t": ("enc_c", "enc_u_t", "dec_t"),
    "dis_s": ("dis_s",),
    "dis_t": ("dis_t",),
}

# pushes reconstructions far from the data so |x - x_hat| has no kink nearby
DECODER_OFFSET = 10.0


class TermCheck(NamedTuple):
    seed: int
    term: str
    parameter: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < TOLERANCE)


class TinyProblem(NamedTuple):
    nets: Networks
    batch: GroupBatch
    noise: StepNoise


def tiny_problem(seed: int) -> TinyProblem:
    rng = Rng(seed)
    num_classes = 2 + int(rng.integers(3))
    obs_dim = 5
    config = NetworkConfig(
        content_dim=2,
        style_dim=2,
        encoder_hidden=[4],
        classifier_hidden=[3],
        discriminator_hidden=[4],
    )
    prior = RcgParams(
        mu1=rng.normal(2),
        delta_raw=0.3 * rng.normal((2, num_classes - 1)),
        sigma_raw=rng.normal((2, num_classes - 1)),
    )
    nets = Networks.build(config, obs_dim, num_classes, prior, rng)
    for domain in ("s", "t"):
        nets.dec(domain).layers[-1].bias += DECODER_OFFSET

    source_y = np.repeat(np.arange(num_classes), 2)
    target_labels = np.repeat(np.arange(num_classes), 2)
    pseudo = PseudoLabelSet(target_labels, np.ones(target_labels.size))
    batch = draw_group_batch(
        rng.normal((source_y.size, obs_dim)),
        source_y,
        rng.normal((target_labels.size, obs_dim)),
        pseudo,
        num_classes,
        group_size=2,
        groups_per_step=2,
        rng=rng,
    )
    return TinyProblem(nets, batch, StepNoise.draw(batch, nets, rng))


def check_model(seed: int) -> list[TermCheck]:
    nets, batch, noise = tiny_problem(seed)
    params = nets.parameters()
    checks = []
    for term, destinations in TERM_DESTINATIONS.items():
        graph = StepGraph(batch, nets, noise, adversarial=True)
        analytic = graph.backward(single_term_routing(term))
        reachable = {
            name: value
            for name, value in params.items()
            if name.split(".", 1)[0] in destinations
        }

        def loss(term: str = term) -> float:
            report = StepGraph(batch, nets, noise, adversarial=True).report
            return getattr(report, term)

        checks.extend(
            TermCheck(seed, term, result.name, result.max_rel_error)
            for result in check_gradients(loss, reachable, analytic)
        )
    return checks


def run_gradcheck(seed: int, models: int = 20) -> list[TermCheck]:
    """Check every loss term on ``models`` tiny models seeded ``seed, seed + 1, ...``."""
    checks: list[TermCheck] = []
    for index in range(models):
        checks.extend(check_model(seed + index))
    worst = max(checks, key=lambda c: c.max_rel_error)
    logger.info(
        "Gradcheck over %d models: worst %s/%s rel. error %.3g",
        models,
        worst.term,
        worst.parameter,
        worst.max_rel_error,
    )
    return checks
