"""``rcg-uda`` command line: prior / KL / gradient self-checks and UDA experiments.

Every subcommand writes its artifacts to ``--out``. Check-type commands print one
``PASS``/``FAIL`` line and exit 1 on failure; configuration and IO errors exit 2.
"""

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from contextlib import closing
from pathlib import Path

from rcg_uda import __version__
from rcg_uda.bench.compare import (
    read_results,
    run_comparison,
    summary_markdown,
    write_results,
)
from rcg_uda.bench.data import SynthDataset, load_dataset, save_dataset
from rcg_uda.bench.metrics import ConfusionMatrix, prediction_distribution, score
from rcg_uda.config import RunConfig
from rcg_uda.di import make_run_container
from rcg_uda.diagnostics import (
    CHOL_TOLERANCE,
    MIN_R_SQUARED,
    POE_SPREAD_TOLERANCE,
    kl_agreement,
    kl_scaling,
    poe_check,
    structured_cholesky_error,
    violation_report,
)
from rcg_uda.exception import RcgError
from rcg_uda.neural.checkpoint import load_checkpoint
from rcg_uda.prior import RcgParams, default_threads, moment_check, sample_chains
from rcg_uda.tensor_math import Rng
from rcg_uda.training.check import run_gradcheck
from rcg_uda.training.loop import SelfTrainer, predict
from rcg_uda.training.networks import Networks
from rcg_uda.training.step import TERMS
from rcg_uda.util import write_rows

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2

# moment deviations are maxima over every mean / covariance entry
MOMENT_Z_LIMIT = 5.0

Command = Callable[[argparse.Namespace], int]


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _prior_params(config: RunConfig) -> RcgParams:
    return RcgParams.from_config(
        config.prior, config.data.num_classes, config.network.content_dim, config.sigma_rule
    )


def _write_prior(params: RcgParams, out: Path) -> Path:
    path = out / "prior.json"
    path.write_text(
        params.to_config().model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8"
    )
    return path


def _verdict(passed: bool, detail: str) -> int:
    print(f"{'PASS' if passed else 'FAIL'}: {detail}")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_prior_sample(args: argparse.Namespace) -> int:
    config = _load_config(args)
    params = _prior_params(config)
    draws = sample_chains(params, Rng(config.train.seed), args.n)
    k, d = params.num_classes, params.content_dim
    header = [f"c{i}_{j}" for i in range(k) for j in range(d)]
    write_rows(
        args.out / "prior_samples.csv",
        header,
        (dict(zip(header, draw.ravel().tolist(), strict=True)) for draw in draws),
    )
    _write_prior(params, args.out)
    logger.info("Wrote %d prior draws to %s", args.n, args.out)
    return EXIT_OK


def cmd_prior_check(args: argparse.Namespace) -> int:
    config = _load_config(args)
    params = _prior_params(config)
    rng = Rng(config.train.seed)
    rows = violation_report(params, args.n, rng.child(0), default_threads())
    write_rows(
        args.out / "violations.csv",
        ["pair", "dim", "rate", "expected", "threshold", "passed"],
        ({**row._asdict(), "passed": row.passed} for row in rows),
    )
    moments = moment_check(params, args.n, rng.child(1))
    chol_error = structured_cholesky_error(rng.child(2))
    write_rows(
        args.out / "moments.csv",
        ["max_mean_z", "max_cov_z", "max_cholesky_error"],
        [{**moments._asdict(), "max_cholesky_error": chol_error}],
    )
    worst = max(rows, key=lambda row: row.rate)
    passed = (
        all(row.passed for row in rows)
        and max(moments) < MOMENT_Z_LIMIT
        and chol_error < CHOL_TOLERANCE
    )
    return _verdict(
        passed,
        f"worst violation rate {worst.rate:.5f} (threshold {worst.threshold:.5f}), "
        f"moment z {max(moments):.2f}, Cholesky error {chol_error:.2e}",
    )


def cmd_kl_validate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    rng = Rng(config.train.seed)
    rows = kl_agreement(rng.child(0), configs=args.configs, n=args.n)
    write_rows(
        args.out / "kl_validation.csv",
        ["config_id", "num_classes", "content_dim", "closed_form", "mc_estimate", "rel_error"],
        (
            {
                "config_id": row.config,
                "num_classes": row.num_classes,
                "content_dim": row.content_dim,
                "closed_form": row.closed_form,
                "mc_estimate": row.monte_carlo,
                "rel_error": row.rel_error,
            }
            for row in rows
        ),
    )
    scaling = kl_scaling(rng.child(1))
    write_rows(
        args.out / "kl_scaling.csv",
        ["content_dim", "seconds"],
        (row._asdict() for row in scaling.rows),
    )
    spread = poe_check(rng.child(2))
    worst = max(row.rel_error for row in rows)
    passed = all(row.passed for row in rows) and scaling.passed and spread < POE_SPREAD_TOLERANCE
    return _verdict(
        passed,
        f"worst KL rel. error {worst:.4f}, scaling R^2 {scaling.r_squared:.3f} "
        f"(> {MIN_R_SQUARED}), PoE spread {spread:.2e}",
    )


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    checks = run_gradcheck(seed, models=args.models)
    write_rows(
        args.out / "gradcheck.csv",
        ["seed", "term", "parameter", "max_rel_error", "passed"],
        ({**check._asdict(), "passed": check.passed} for check in checks),
    )
    worst = max(checks, key=lambda check: check.max_rel_error)
    return _verdict(
        all(check.passed for check in checks),
        f"{len(checks)} gradients, worst {worst.term}/{worst.parameter} "
        f"rel. error {worst.max_rel_error:.2e}",
    )


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = _load_config(args)
    with closing(make_run_container(config)) as container:
        written = save_dataset(container.get(SynthDataset), args.out)
    logger.info("Wrote %s", ", ".join(path.name for path in written))
    return EXIT_OK


def _write_scores(dataset: SynthDataset, nets: Networks, out: Path) -> None:
    prediction = predict(nets.enc_c, nets.cls, dataset.target_test.x)
    truth = dataset.target_test.y
    scores = score(truth, prediction.labels, nets.num_classes)
    summary = prediction_distribution(prediction.probs, truth)
    write_rows(
        out / "metrics.csv",
        ["accuracy", "mae", "qwk", "concentration"],
        [{**scores._asdict(), "concentration": summary.concentration}],
    )
    conf = ConfusionMatrix.from_predictions(truth, prediction.labels, nets.num_classes)
    header = ["true", *(f"pred_{k}" for k in range(nets.num_classes))]
    write_rows(
        out / "confusion.csv",
        header,
        ({"true": k, **dict(zip(header[1:], row.tolist(), strict=True))} for k, row in enumerate(conf.counts)),
    )
    logger.info("Target test: QWK %.4f, accuracy %.4f, MAE %.4f", scores.qwk, scores.accuracy, scores.mae)


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    with closing(make_run_container(config, progress=not args.quiet)) as container:
        trainer = container.get(SelfTrainer)
        dataset = container.get(SynthDataset)
        nets = trainer.fit()
    nets.save(out / "model.npz", {"config": config.model_dump(mode="json", by_alias=True)})
    config.dump_json(out / "config.json")
    if nets.prior is not None:
        _write_prior(nets.prior, out)
    write_rows(
        out / "epochs.csv",
        ["epoch", "round", "phase", "learning_rate", *TERMS, "accuracy", "mae", "qwk"],
        (
            {**record.model_dump(exclude={"losses"}), **record.losses}
            for record in trainer.epochs
        ),
    )
    with (out / "run_log.jsonl").open("w", encoding="utf-8") as fh:
        fh.writelines(record.model_dump_json() + "\n" for record in trainer.rounds)
    _write_scores(dataset, nets, out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    _, meta = load_checkpoint(args.checkpoint)
    config = RunConfig.from_mapping(meta.get("config", {}))
    with closing(make_run_container(config)) as container:
        nets = container.get(Networks)
        dataset = load_dataset(args.data) if args.data else container.get(SynthDataset)
    nets.load(args.checkpoint)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_scores(dataset, nets, args.out)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    source = args.results or args.out / "comparison.csv"
    try:
        report = read_results(source)
    except (KeyError, ValueError) as e:
        raise RcgError(f"{source}: malformed comparison table ({e})") from e
    text = summary_markdown(report)
    (args.out / "summary.md").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    config = _load_config(args)
    baseline = RunConfig.load(args.baseline_config) if args.baseline_config else None
    seeds = list(range(config.train.seed, config.train.seed + args.seeds))
    report = run_comparison(
        config,
        seeds,
        baseline=baseline,
        extra_sigma_rules=args.extra_sigma,
        supervised=args.supervised,
        threads=default_threads(),
        ablate_adversarial=args.ablate_adversarial,
    )
    write_results(report, args.out / "comparison.csv")
    text = summary_markdown(report)
    (args.out / "summary.md").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _positive_int(value: str) -> int:
    number = int(value)
    if number <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML (or JSON) run configuration")
    common.add_argument("--out", type=Path, default=Path(), help="output directory")
    common.add_argument("--seed", type=int, help="overrides data.seed and train.seed")
    common.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")

    parser = argparse.ArgumentParser(prog="rcg-uda", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, handler: Command, help_text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        cmd.set_defaults(handler=handler)
        return cmd

    add("prior-sample", cmd_prior_sample, "draw anchor chains from the configured prior").add_argument(
        "--n", type=_positive_int, default=1000, help="number of draws"
    )
    add("prior-check", cmd_prior_check, "sigma-rule violation rates and moment check").add_argument(
        "--n", type=_positive_int, default=100_000, help="Monte Carlo sample count"
    )
    kl = add("kl-validate", cmd_kl_validate, "content KL vs Monte Carlo, scaling and PoE checks")
    kl.add_argument("--n", type=_positive_int, default=200_000, help="Monte Carlo samples per config")
    kl.add_argument("--configs", type=_positive_int, default=20, help="random configurations")
    add("gradcheck", cmd_gradcheck, "finite-difference check of every loss gradient").add_argument(
        "--models", type=_positive_int, default=20, help="tiny random models"
    )
    add("gen-data", cmd_gen_data, "write the synthetic benchmark as CSV")
    add("train", cmd_train, "train one configuration and write checkpoint and logs")
    evaluate = add("eval", cmd_eval, "score a checkpoint on the target test split")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--data", type=Path, help="dataset directory written by gen-data")
    add("report", cmd_report, "summarize a comparison table").add_argument(
        "--results", type=Path, help="comparison CSV (default: <out>/comparison.csv)"
    )
    compare = add("compare", cmd_compare, "source-only vs i.i.d. vs RCG arms over seeds")
    compare.add_argument("--seeds", type=_positive_int, default=5, help="consecutive seeds from train.seed")
    compare.add_argument("--baseline-config", type=Path, help="explicit i.i.d. baseline config")
    compare.add_argument(
        "--extra-sigma", type=float, nargs="*", default=[], help="additional sigma rules to sweep"
    )
    compare.add_argument("--supervised", action="store_true", help="add the target-label upper bound arm")
    compare.add_argument(
        "--ablate-adversarial", action="store_true", help="add RCG(2 sigma) without discriminators"
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_ERROR if e.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return args.handler(args)
    except (RcgError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
