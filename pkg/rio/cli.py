"""Command line entry point: ``python -m rio <command>``.

Commands: simulate, train, run, ablate, plot, eval. Exit codes are 0 on
success, 2 for configuration errors, 3 for data and I/O errors and 4 for
runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import settings
from .config import RunConfig, ScenarioConfig, Variant, load_config
from .dataset import (
    GROUNDTRUTH_FILE,
    Dataset,
    build_training_set,
    read_dataset,
    read_trajectory,
    simulate_dataset,
    training_set_from_dirs,
    write_dataset,
    write_errors,
    write_json,
    write_manifest,
    write_trajectory,
)
from .errors import ConfigurationError, DataError, RioError
from .evaluation import AteReport, ablation_table, ate, synchronize
from .motion_model import save_params, train
from .pipeline import TRAJECTORY_FILE, run_variants, write_run_outputs
from .plotting import plot_errors, plot_trajectories

logger = logging.getLogger(__name__)

PARAMS_FILE = "lstm.json"
ATE_FILE = "ate.json"
ERRORS_FILE = "errors.csv"
ABLATION_VARIANTS = (Variant.FULL, Variant.ICP, Variant.CV)


def _config(args) -> RunConfig:
    config = load_config(args.config)
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
        if config.scenario is not None:
            update["scenario"] = config.scenario.model_copy(update={"seed": args.seed})
    if getattr(args, "dump_debug", False):
        update["dump_debug"] = True
    return config.model_copy(update=update) if update else config


def _out_dir(args, config: RunConfig, command: str) -> Path:
    out = Path(args.out) if args.out else config.output_dir / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(config: RunConfig) -> dict:
    return {
        "run": config.seed,
        "scenario": config.scenario.seed if config.scenario is not None else None,
        "training": config.seed + config.training.seed_offset,
        "optimizer": config.training.hyper.seed,
    }


def _load_dataset(config: RunConfig, progress: bool) -> Dataset:
    if config.dataset is not None:
        logger.info("reading dataset %s", config.dataset)
        return read_dataset(config.dataset)
    return simulate_dataset(config.scenario, config.radar, progress=progress)


def evaluate(estimate, ground_truth, max_gap: float, align: bool, out_dir: Path) -> AteReport:
    pairs = synchronize(estimate, ground_truth, max_gap)
    report = ate(pairs, align=align)
    write_json({**report.as_dict(), "dropped": pairs.dropped}, out_dir / ATE_FILE)
    write_errors(report.per_frame(), out_dir / ERRORS_FILE)
    logger.info(
        "ATE over %d frames: translation rmse %.2f cm, rotation rmse %.2f deg",
        len(pairs),
        report.translation.rmse,
        report.rotation.rmse,
    )
    return report


# ----- commands -----

def cmd_simulate(args) -> int:
    started = time.time()
    config = _config(args)
    if config.scenario is None:
        raise ConfigurationError("simulate needs a 'scenario' section, not a 'dataset'")
    out = _out_dir(args, config, "dataset")
    dataset = simulate_dataset(config.scenario, config.radar, progress=True)
    write_dataset(dataset, out)
    write_manifest(out, "simulate", config.snapshot(), _seeds(config), started)
    print(out)
    return 0


def cmd_train(args) -> int:
    started = time.time()
    config = _config(args)
    out = _out_dir(args, config, "model")
    hyper = config.training.hyper
    if args.data:
        dataset = training_set_from_dirs(args.data, hyper.window, args.validation or ())
    else:
        dataset = build_training_set(config.training, config.scenario or ScenarioConfig(), config.radar, config.seed, progress=True)
    params = train(dataset, hyper, progress=True)
    save_params(params, out / PARAMS_FILE)
    write_manifest(out, "train", config.snapshot(), _seeds(config), started)
    print(out / PARAMS_FILE)
    return 0


def cmd_run(args) -> int:
    started = time.time()
    config = _config(args)
    variant = Variant(args.variant)
    out = _out_dir(args, config, "run")
    dataset = _load_dataset(config, progress=True)
    result = run_variants(dataset, config, [variant], progress=True)[variant.value]
    write_run_outputs(result, out)
    write_trajectory(dataset.ground_truth, out / GROUNDTRUTH_FILE)
    evaluate(result.trajectory, dataset.ground_truth, config.max_sync_gap, config.align_ate, out)
    write_manifest(out, "run", {**config.for_variant(variant).snapshot(), "variant": variant.value}, _seeds(config), started)
    print(out)
    return 0


def cmd_ablate(args) -> int:
    started = time.time()
    config = _config(args)
    out = _out_dir(args, config, "ablation")
    variants = [Variant(v) for v in args.variants] if args.variants else list(ABLATION_VARIANTS)
    dataset = _load_dataset(config, progress=True)
    results = run_variants(dataset, config, variants, progress=True)

    reports = {}
    for name, result in results.items():
        sub = out / name
        write_run_outputs(result, sub)
        reports[name] = evaluate(result.trajectory, dataset.ground_truth, config.max_sync_gap, config.align_ate, sub)
    write_trajectory(dataset.ground_truth, out / GROUNDTRUTH_FILE)

    table = ablation_table(reports)
    (out / "ablation.csv").write_text(table.to_csv())
    (out / "ablation.txt").write_text(table.to_text())
    plot_trajectories({"gt": dataset.ground_truth, **{n: r.trajectory for n, r in results.items()}}, out / "trajectory.svg", "ablation")
    plot_errors(reports, out / "errors.svg")
    write_manifest(out, "ablate", config.snapshot(), _seeds(config), started)
    sys.stdout.write(table.to_text())
    return 0


def cmd_plot(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise DataError(f"run directory {run_dir} does not exist")
    estimate = read_trajectory(run_dir / TRAJECTORY_FILE)
    ground_truth = read_trajectory(run_dir / GROUNDTRUTH_FILE)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    plot_trajectories({"gt": ground_truth, "estimate": estimate}, out / "trajectory.svg")
    reports = {}
    if estimate and ground_truth:
        reports["estimate"] = ate(synchronize(estimate, ground_truth, args.max_gap), align=args.align)
    plot_errors(reports, out / "errors.svg")
    print(out)
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    run_dir = Path(args.run_dir) if args.run_dir else None
    estimate_path = Path(args.estimate) if args.estimate else (run_dir / TRAJECTORY_FILE if run_dir else None)
    gt_path = Path(args.groundtruth) if args.groundtruth else (run_dir / GROUNDTRUTH_FILE if run_dir else None)
    if estimate_path is None or gt_path is None:
        raise ConfigurationError("eval needs a run directory or both --estimate and --groundtruth")
    out = Path(args.out) if args.out else (run_dir or estimate_path.parent)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(read_trajectory(estimate_path), read_trajectory(gt_path), args.max_gap, args.align, out)
    config = {"estimate": str(estimate_path), "groundtruth": str(gt_path), "max_gap": args.max_gap, "align": args.align}
    if out != run_dir:
        write_manifest(out, "eval", config, {}, started)
    print(f"translation rmse {report.translation.rmse:.3f} cm, rotation rmse {report.rotation.rmse:.3f} deg")
    return 0


# ----- parser -----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rio", description="Radar-inertial odometry toolkit")
    parser.add_argument("--log-level", default=None, help=f"logging level (default {settings.LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help: str):
        p.add_argument("--config", default=None, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the run and scenario seed")
        p.add_argument("--out", default=None, help=out_help)

    p = sub.add_parser("simulate", help="generate a synthetic radar + IMU dataset")
    common(p, "dataset directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the LSTM motion model")
    common(p, "directory for lstm.json")
    p.add_argument("--data", nargs="*", default=None, help="dataset directories to train on (default: simulate)")
    p.add_argument("--validation", nargs="*", default=None, help="dataset directories held out for validation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run the odometry pipeline")
    common(p, "run directory")
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.FULL.value)
    p.add_argument("--dump-debug", action="store_true", help="write per-frame association records")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="compare pipeline variants on one dataset")
    common(p, "ablation directory")
    p.add_argument("--variants", nargs="+", choices=[v.value for v in Variant], default=None)
    p.add_argument("--dump-debug", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render SVG plots for a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None)
    p.add_argument("--max-gap", type=float, default=0.005)
    p.add_argument("--align", action="store_true")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("eval", help="absolute trajectory error of an estimate")
    p.add_argument("run_dir", nargs="?", default=None)
    p.add_argument("--estimate", default=None)
    p.add_argument("--groundtruth", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--max-gap", type=float, default=0.005)
    p.add_argument("--align", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings.configure_logging(args.log_level)
    try:
        return args.func(args)
    except RioError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return DataError.exit_code
    except Exception:
        logger.exception("unexpected failure")
        return 4
