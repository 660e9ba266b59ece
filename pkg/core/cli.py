"""Command-line surface: generate | train | evaluate | perturb | report.

All artifacts of one experiment live under --out:
    instances/{train,eval,test}_<seed>.json
    checkpoints/{pqn,ptrnet}.json, checkpoints/{pqn,ptrnet}_perturbed.json
    history_<method>.csv, steps_<method>.csv, policy_<method>.csv
    report.json, table.csv
    perturbation.json, table_perturbed.csv (perturb only)
    plots/*.svg
    logs/pqn.log

Exit codes: 0 success, 2 bad arguments or configuration, 3 missing files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd
from dotenv import load_dotenv

from core.baselines import benchmark_tour
from core.experiment import (
    POLICY_COLUMNS,
    SPLITS,
    ExperimentConfig,
    ExperimentReport,
    emit_history_csv,
    emit_policy_csv,
    emit_step_csv,
    instance_path,
    read_checkpoint,
    read_history_csv,
    read_report,
    read_split,
    report_tours,
    seed_splits,
    write_checkpoint,
    write_instance_file,
    write_report,
)
from core.trainer import (
    TrainConfig,
    evaluate_methods,
    run_perturbation_protocol,
    train_pqn,
    train_ptrnet_supervised,
)
from core.tsp import generate_instance

SEED_ENV = "PQN_SEED"

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_MISSING = 3


def _setup_logging(log_dir: Path):
    log_dir.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger()
    if not root.handlers:
        root.setLevel(logging.INFO)
        fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s — %(message)s")
        fh = logging.FileHandler(log_dir / "pqn.log")
        fh.setFormatter(fmt)
        sh = logging.StreamHandler()
        sh.setFormatter(fmt)
        root.addHandler(fh)
        root.addHandler(sh)
    logging.getLogger("kaleido").setLevel(logging.WARNING)


def _pair(kind):
    def parse(text: str):
        parts = text.split(":")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected A:B, got {text!r}")
        try:
            return kind(parts[0]), kind(parts[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected two {kind.__name__} values, got {text!r}") from None
    return parse


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqn", description="Pointer Q-Network TSP experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", type=Path, default=None, help="experiment directory")
        p.add_argument("--seed", type=int, default=None)

    def training(p):
        p.add_argument("--hidden", type=int, choices=(128, 256), default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--steps", type=int, default=None, help="environment steps per epoch")
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--lr-ptr", type=float, default=None)
        p.add_argument("--lr-q", type=float, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--sync-c", type=int, default=None)
        p.add_argument("--sup-steps", type=int, default=None, help="supervised Adam steps per epoch")
        p.add_argument("--benchmark", choices=("two_opt", "held_karp"), default=None)

    p = sub.add_parser("generate", help="write train/eval/test instance files")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, default=None, help="instances per split")

    p = sub.add_parser("train", help="train PQN and/or the pointer baseline")
    common(p)
    training(p)
    p.add_argument("--method", choices=("pqn", "ptrnet", "both"), default="both")

    p = sub.add_parser("evaluate", help="greedy evaluation of stored checkpoints")
    common(p)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--benchmark", choices=("two_opt", "held_karp"), default=None)

    p = sub.add_parser("perturb", help="PQN and pointer training with perturbed costs in an epoch window")
    common(p)
    training(p)
    p.add_argument("--perturb-range", type=_pair(int), default=None, metavar="A:B")
    p.add_argument("--perturb-bounds", type=_pair(float), default=None, metavar="LO:HI")

    p = sub.add_parser("report", help="render SVG plots from stored series")
    common(p)
    return parser


def _settings():
    # imported lazily so a broken pqn.toml surfaces as exit code 2, not an import error
    from core.pqn_config import config
    return config


def _train_config(args, settings) -> TrainConfig:
    env_seed = os.environ.get(SEED_ENV)
    try:
        seed = int(env_seed) if env_seed is not None else args.seed
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
    return settings.training.with_overrides(
        seed=seed,
        hidden=getattr(args, "hidden", None),
        epochs=getattr(args, "epochs", None),
        steps_per_epoch=getattr(args, "steps", None),
        gamma=getattr(args, "gamma", None),
        lr_ptr=getattr(args, "lr_ptr", None),
        lr_q=getattr(args, "lr_q", None),
        batch_size=getattr(args, "batch", None),
        sync_c=getattr(args, "sync_c", None),
        sup_steps=getattr(args, "sup_steps", None),
    )


def _benchmarks(instances, method: str):
    return [benchmark_tour(inst, method) for inst in instances]


def _write_histories(out: Path, name: str, history) -> None:
    emit_history_csv(history, out / f"history_{name}.csv")
    emit_step_csv(history, out / f"steps_{name}.csv")
    emit_policy_csv(history, out / f"policy_{name}.csv")


def _recorded_benchmark(out: Path) -> Optional[str]:
    path = out / "experiment.json"
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text()).get("benchmark")
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not valid JSON ({e})") from None


def cmd_generate(args, settings, out: Path) -> int:
    seeds = settings.seeds
    bases = {"train": seeds.train, "eval": seeds.eval, "test": seeds.test}
    if args.seed is not None:
        bases = {split: args.seed + i * seeds.span for i, split in enumerate(SPLITS)}
    count = args.count or 5
    splits = seed_splits(bases, count, seeds.span)
    for split, split_seeds in splits.items():
        for seed in split_seeds:
            write_instance_file(instance_path(out, split, seed), generate_instance(args.n, seed))
    logger.info(f"generated {count} instances per split, n={args.n}, under {out / 'instances'}")
    return EXIT_OK


def cmd_train(args, settings, out: Path) -> int:
    cfg = _train_config(args, settings)
    instances = read_split(out, "train")
    n = instances[0].n
    exp = ExperimentConfig(kind="custom", n=n, seeds={"train": tuple(i.seed for i in instances)}, train=cfg,
                           out_dir=out, benchmark=args.benchmark or "two_opt")
    bench = _benchmarks(instances, exp.benchmark)
    runs = {"pqn": train_pqn, "ptrnet": train_ptrnet_supervised}
    names = list(runs) if args.method == "both" else [args.method]
    for name in names:
        params, history = runs[name](instances, bench, cfg)
        write_checkpoint(out / "checkpoints" / f"{name}.json", params, name, cfg)
        _write_histories(out, name, history)
    (out / "experiment.json").write_text(json.dumps(exp.echo(), indent=2))
    return EXIT_OK


def cmd_evaluate(args, settings, out: Path) -> int:
    instances = read_split(out, args.split)
    ckpt_dir = out / "checkpoints"
    loaded = {name: read_checkpoint(ckpt_dir / f"{name}.json")
              for name in ("pqn", "ptrnet") if (ckpt_dir / f"{name}.json").exists()}
    if not loaded:
        raise FileNotFoundError(f"no checkpoints under {ckpt_dir}; run train first")
    cfg = next((c.config for c in loaded.values() if c.config is not None), settings.training)
    bench_method = args.benchmark or _recorded_benchmark(out) or "two_opt"
    bench = _benchmarks(instances, bench_method)
    results = evaluate_methods(
        instances, bench, cfg,
        pqn_params=loaded["pqn"].params if "pqn" in loaded else None,
        ptr_params=loaded["ptrnet"].params if "ptrnet" in loaded else None,
    )
    report = ExperimentReport(methods=results, seed=cfg.seed,
                              config={"split": args.split, "benchmark": bench_method, "train": asdict(cfg)})
    report.check(instances)
    write_report(report, out)
    for name, r in results.items():
        logger.info(f"{name:10s} J={r.J_mean:.4f} sigma_B={r.sigma_mean:.2f}")
    return EXIT_OK


def cmd_perturb(args, settings, out: Path) -> int:
    cfg = _train_config(args, settings)
    kind = settings.experiments.get("perturbed-tsp20")
    window = args.perturb_range or (kind.perturb_window if kind else (5, 10))
    bounds = args.perturb_bounds or (kind.perturb_bounds if kind else (0.9, 1.1))
    instances = read_split(out, "train")
    try:
        eval_instances = read_split(out, "eval")
    except FileNotFoundError:
        eval_instances = None
    bench_method = args.benchmark or "two_opt"
    run = run_perturbation_protocol(
        instances, cfg, perturb_epochs=window, alpha=bounds[0], beta=bounds[1], seed=cfg.seed,
        benchmark_tours=_benchmarks(instances, bench_method), eval_instances=eval_instances,
        benchmark=bench_method,
    )
    for name, history in run.histories.items():
        write_checkpoint(out / "checkpoints" / f"{name}_perturbed.json", run.params[name], name, cfg)
        _write_histories(out, f"{name}_perturbed", history)
    report = ExperimentReport(
        methods=run.evaluation, histories=run.histories, seed=cfg.seed,
        config={"window": list(run.window), "bounds": list(run.bounds), "benchmark": bench_method,
                "split": "eval" if eval_instances is not None else "train", "train": asdict(cfg)},
    )
    report.check(eval_instances if eval_instances is not None else instances)
    write_report(report, out, json_name="perturbation.json", table_name="table_perturbed.csv")
    return EXIT_OK


def _existing(out: Path, prefix: str, names: Sequence[str], suffix: str = "") -> dict:
    return {name: out / f"{prefix}_{name}{suffix}.csv" for name in names
            if (out / f"{prefix}_{name}{suffix}.csv").exists()}


def cmd_report(args, settings, out: Path) -> int:
    from core import charts

    plots = out / "plots"
    methods = ("pqn", "ptrnet")
    frames = {name: read_history_csv(path) for name, path in _existing(out, "history", methods).items()}
    perturbed = {name: read_history_csv(path)
                 for name, path in _existing(out, "history", methods, "_perturbed").items()}
    if not frames and not perturbed:
        raise FileNotFoundError(f"no history CSVs under {out}; run train or perturb first")
    if frames:
        charts.save_svg(charts.metrics_figure(frames), plots / "metrics.svg")
        for name, frame in frames.items():
            charts.save_svg(charts.loss_figure(frame), plots / f"losses_{name}.svg")
        policy = {name: read_history_csv(path, POLICY_COLUMNS)
                  for name, path in _existing(out, "policy", methods).items()}
        if policy:
            charts.save_svg(charts.metrics_figure(policy, metrics=charts.POLICY_METRICS), plots / "policy.svg")
    if perturbed:
        window = tuple(read_report(out / "perturbation.json")["config"]["window"])
        charts.save_svg(charts.metrics_figure(perturbed, window=window), plots / "metrics_perturbed.svg")
        for name, frame in perturbed.items():
            charts.save_svg(charts.loss_figure(frame, window=window), plots / f"losses_{name}_perturbed.svg")
        policy = {name: read_history_csv(path, POLICY_COLUMNS)
                  for name, path in _existing(out, "policy", methods, "_perturbed").items()}
        if policy:
            charts.save_svg(charts.metrics_figure(policy, window=window, metrics=charts.POLICY_METRICS),
                            plots / "policy_perturbed.svg")
        steps = out / "steps_pqn_perturbed.csv"
        if steps.exists():
            step_frame = pd.read_csv(steps, float_precision="round_trip").dropna(subset=["td_loss"])
            charts.save_svg(charts.loss_figure(step_frame, x="step"), plots / "losses_pqn_perturbed_steps.svg")
    report_path = out / "report.json"
    if report_path.exists():
        raw = read_report(report_path)
        test = read_split(out, raw.get("config", {}).get("split", "test"))[0]
        if test.coords is not None:
            tours = {m: report_tours(raw, m)[0] for m in raw["methods"]}
            charts.save_svg(charts.path_figure(test.coords, tours, title="Tours on the first test instance"),
                            plots / "paths.svg")
    logger.info(f"plots written under {plots}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "perturb": cmd_perturb,
    "report": cmd_report,
}


def cli_run(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_BAD_CONFIG
    try:
        settings = _settings()
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: bad configuration: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    out = args.out or settings.out_dir
    _setup_logging(out / settings.log_dir)
    try:
        return COMMANDS[args.command](args, settings, out)
    except FileNotFoundError as e:
        logger.error(f"missing file: {e}")
        print(f"error: missing file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as e:
        logger.error(f"bad configuration: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
