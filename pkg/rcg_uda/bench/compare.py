"""RCG vs. i.i.d.-prior comparison on the synthetic benchmark."""

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import NamedTuple

import numpy as np

from rcg_uda.bench.data import generate
from rcg_uda.bench.metrics import prediction_distribution, score
from rcg_uda.config import PriorKind, RunConfig
from rcg_uda.exception import ConfigError
from rcg_uda.tensor_math import Rng
from rcg_uda.training.loop import SelfTrainer, predict
from rcg_uda.training.networks import make_networks
from rcg_uda.util import read_rows, write_rows

logger = logging.getLogger(__name__)

SOURCE_ONLY = "source_only"
BASELINE = "baseline_iid"
SUPERVISED = "supervised"
NO_ADVERSARIAL = "rcg_2sigma_no_adv"
ADVERSARIAL_ABLATION_TOLERANCE = 0.03
METRICS = ("accuracy", "mae", "qwk", "concentration")
CSV_HEADER = ("arm", "seed", *METRICS)


def rcg_arm(sigma_rule: float) -> str:
    return f"rcg_{sigma_rule:g}sigma"


class ArmResult(NamedTuple):
    arm: str
    seed: int
    accuracy: float
    mae: float
    qwk: float
    concentration: float


class ComparisonReport(NamedTuple):
    results: list[ArmResult]

    def arms(self) -> list[str]:
        return list(dict.fromkeys(r.arm for r in self.results))

    def median(self, arm: str, metric: str) -> float:
        return float(np.median([getattr(r, metric) for r in self.results if r.arm == arm]))


def check_comparable(rcg: RunConfig, baseline: RunConfig) -> None:
    """Both configs may only differ in ``prior_kind`` and the sigma rule."""
    ignored = {"prior_kind", "sigma_rule"}
    a = rcg.model_dump(exclude={"prior": True, "train": ignored})
    b = baseline.model_dump(exclude={"prior": True, "train": ignored})
    for section, values in a.items():
        if values != b[section]:
            raise ConfigError(section, "RCG and baseline configs differ beyond the prior")


def _with_train(config: RunConfig, **updates: object) -> RunConfig:
    return config.model_copy(update={"train": config.train.model_copy(update=updates)})


def _with_sigma(config: RunConfig, sigma_rule: float) -> RunConfig:
    prior = config.prior.model_copy(update={"sigma_rule": None})
    updated = config.model_copy(update={"prior": prior})
    return _with_train(updated, prior_kind=PriorKind.RCG, sigma_rule=sigma_rule)


def arm_configs(
    config: RunConfig,
    baseline: RunConfig | None = None,
    extra_sigma_rules: Sequence[float] = (),
    supervised: bool = False,
    ablate_adversarial: bool = False,
) -> dict[str, RunConfig]:
    """Configurations of every arm, in report order."""
    train = config.train
    arms = {
        SOURCE_ONLY: _with_train(
            config,
            rounds=0,
            portions=None,
            warmup_epochs=train.warmup_epochs + train.rounds * train.epochs_per_round,
        ),
        BASELINE: baseline or _with_train(config, prior_kind=PriorKind.IID_GAUSSIAN),
    }
    for sigma_rule in (3.0, 2.0, *extra_sigma_rules):
        arms[rcg_arm(sigma_rule)] = _with_sigma(config, sigma_rule)
    if ablate_adversarial:
        arms[NO_ADVERSARIAL] = _with_train(_with_sigma(config, 2.0), adversarial_enabled=False)
    if supervised:
        arms[SUPERVISED] = _with_sigma(config, 3.0)
    return arms


def run_arm(arm: str, config: RunConfig, seed: int, progress: bool = False) -> ArmResult:
    config = config.with_seed(seed)
    dataset = generate(config.data)
    data = dataset.supervised_view() if arm == SUPERVISED else dataset.training_view()
    rng = Rng(config.train.seed)
    nets = make_networks(config, rng)
    SelfTrainer(nets, config.train, data, rng.child(1), progress=progress).fit()
    prediction = predict(nets.enc_c, nets.cls, dataset.target_test.x)
    scores = score(dataset.target_test.y, prediction.labels, config.data.num_classes)
    summary = prediction_distribution(prediction.probs, dataset.target_test.y)
    logger.info("%s seed %d: QWK %.4f, accuracy %.4f", arm, seed, scores.qwk, scores.accuracy)
    return ArmResult(arm, seed, *scores, summary.concentration)


def run_comparison(
    config: RunConfig,
    seeds: Sequence[int],
    baseline: RunConfig | None = None,
    extra_sigma_rules: Sequence[float] = (),
    supervised: bool = False,
    threads: int = 1,
    ablate_adversarial: bool = False,
) -> ComparisonReport:
    """Train every arm on every seed; results are ordered by arm, then seed."""
    if baseline is not None:
        check_comparable(config, baseline)
    arms = arm_configs(config, baseline, extra_sigma_rules, supervised, ablate_adversarial)
    jobs = [(arm, cfg, seed) for arm, cfg in arms.items() for seed in seeds]
    logger.info("Comparison: %d arms x %d seeds on %d thread(s)", len(arms), len(seeds), threads)
    if threads <= 1:
        results = [run_arm(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: run_arm(*job), jobs))
    return ComparisonReport(results)


def write_results(report: ComparisonReport, path: str | Path) -> Path:
    return write_rows(path, CSV_HEADER, (r._asdict() for r in report.results))


def read_results(path: str | Path) -> ComparisonReport:
    rows = read_rows(path)
    return ComparisonReport([
        ArmResult(
            arm=row["arm"],
            seed=int(row["seed"]),
            **{metric: float(row[metric]) for metric in METRICS},
        )
        for row in rows
    ])


def summary_markdown(report: ComparisonReport) -> str:
    """Median table plus the directional comparisons as PASS/FAIL lines."""
    lines = [
        "| arm | median accuracy | median MAE | median QWK | median concentration |",
        "|---|---|---|---|---|",
    ]
    for arm in report.arms():
        cells = [f"{report.median(arm, metric):.4f}" for metric in METRICS]
        lines.append(f"| {arm} | {' | '.join(cells)} |")
    arms = set(report.arms())
    checks = []
    if {SOURCE_ONLY, BASELINE, rcg_arm(3.0)} <= arms:
        floor = report.median(SOURCE_ONLY, "qwk")
        checks.append((
            "UDA arms beat source-only on median QWK",
            min(report.median(BASELINE, "qwk"), report.median(rcg_arm(3.0), "qwk")) > floor,
        ))
    if {BASELINE, rcg_arm(3.0)} <= arms:
        checks.append((
            "RCG(3 sigma) median QWK >= baseline + 0.02",
            report.median(rcg_arm(3.0), "qwk") >= report.median(BASELINE, "qwk") + 0.02,
        ))
    if {rcg_arm(2.0), rcg_arm(3.0)} <= arms:
        checks.append((
            "RCG(2 sigma) median QWK >= RCG(3 sigma)",
            report.median(rcg_arm(2.0), "qwk") >= report.median(rcg_arm(3.0), "qwk"),
        ))
    if {rcg_arm(2.0), NO_ADVERSARIAL} <= arms:
        gap = abs(report.median(rcg_arm(2.0), "qwk") - report.median(NO_ADVERSARIAL, "qwk"))
        checks.append((
            f"adversarial ablation changes median QWK by < {ADVERSARIAL_ABLATION_TOLERANCE}",
            gap < ADVERSARIAL_ABLATION_TOLERANCE,
        ))
    if checks:
        lines.extend(["", "Directional checks:", ""])
        lines.extend(f"- {'PASS' if ok else 'FAIL'}: {label}" for label, ok in checks)
    return "\n".join(lines) + "\n"
