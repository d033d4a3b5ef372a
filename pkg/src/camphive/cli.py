"""Command-line driver.

Subcommands: train, prune, eval, pipeline, compare, stats. Every run is
configured by a single JSON file; --seed overrides the config seed.
Exit codes: 0 success, 1 usage/config error, 2 numeric failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import analysis, experiment, pruning
from .data import load_dataset
from .errors import ConfigError, DataFormatError, NumericError, PipelineStageError
from .network import load_checkpoint, save_checkpoint


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are exit 1
        raise ConfigError(message)


def _build_parser():
    parser = _Parser(prog="camphive",
                     description="Curvature-guided cyclic pair-merge pruning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        return p

    p = add("pipeline", "train, prune, fine-tune, evaluate, and write a report")
    p.add_argument("--report", default=None, help="report JSON path (overrides config)")

    p = add("train", "train a baseline model and save a checkpoint")
    p.add_argument("--out", required=True, help="checkpoint output path")

    p = add("prune", "prune a checkpointed model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="pruned checkpoint output path")
    p.add_argument("--report", default=None, help="prune report JSON path")

    p = add("eval", "evaluate a checkpoint on the config's test split")
    p.add_argument("--checkpoint", required=True)

    p = add("stats", "activation stats + MAD between two checkpoints, as CSV")
    p.add_argument("--baseline", required=True)
    p.add_argument("--pruned", required=True)
    p.add_argument("--out", required=True, help="CSV output path")

    p = add("compare", "strategy/percentile/seed grid, as CSV")
    p.add_argument("--strategies", required=True,
                   help="comma list from: " + ",".join(pruning.STRATEGIES))
    p.add_argument("--p-grid", required=True, help="comma list of percentiles")
    p.add_argument("--seeds", required=True, help="comma list of integer seeds")
    p.add_argument("--out", default=None, help="CSV output path")
    return parser


def _load_config(args):
    config = experiment.ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _prepared_splits(config):
    train_raw, test_raw = load_dataset(config.dataset)
    return (experiment.prepare_features(train_raw, config.model),
            experiment.prepare_features(test_raw, config.model))


def _cmd_pipeline(args):
    config = _load_config(args)
    if args.report is not None:
        config.report_path = args.report
    report = experiment.run_pipeline(config)
    _emit({"status": report["status"],
           "accuracy": report["accuracy"],
           "flops_reduction_pct": report["flops"]["reduction_pct"],
           "report_path": config.report_path})


def _cmd_train(args):
    config = _load_config(args)
    seeds = experiment._child_seeds(config.seed)
    train_data, test_data = _prepared_splits(config)
    net = experiment.build_model(config.model, train_data, seeds["model_init"])
    history = experiment.train(net, train_data, epochs=config.train.epochs,
                               lr=config.train.lr, batch_size=config.train.batch_size,
                               seed=seeds["train_shuffle"])
    save_checkpoint(net, args.out)
    _emit({"checkpoint": args.out, "epochs": config.train.epochs,
           "final_loss": history[-1] if history else None,
           "test_accuracy": analysis.evaluate(net, test_data)})


def _cmd_prune(args):
    config = _load_config(args)
    seeds = experiment._child_seeds(config.seed)
    train_data, _ = _prepared_splits(config)
    net = load_checkpoint(args.checkpoint)
    pi = config.prune.power_iteration
    calib = train_data.take(int(pi.get("calib_size", 512)), seeds["calib_subset"]).batch()
    pruned, mask, report = pruning.prune(
        net, config.prune.strategy, config.prune.p, calib=calib, seed=seeds["prune"],
        max_iterations=int(pi.get("max_iterations", 10)), tol=float(pi.get("tol", 1e-6)),
        epsilon=config.prune.epsilon_value())
    save_checkpoint(pruned, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    _emit({"checkpoint": args.out, "strategy": config.prune.strategy,
           "p": config.prune.p, "total_sparsity": mask.sparsity,
           "report_path": args.report})


def _cmd_eval(args):
    config = _load_config(args)
    _, test_data = _prepared_splits(config)
    net = load_checkpoint(args.checkpoint)
    _emit({"checkpoint": args.checkpoint, "accuracy": analysis.evaluate(net, test_data)})


def _cmd_stats(args):
    config = _load_config(args)
    seeds = experiment._child_seeds(config.seed)
    _, test_data = _prepared_splits(config)
    base = load_checkpoint(args.baseline)
    pruned = load_checkpoint(args.pruned)
    probe = test_data.take(config.probe_size, seeds["probe_subset"]).batch()
    rows = analysis.probe_rows(base, pruned, probe)
    analysis.write_stats_csv(rows, args.out)
    _emit({"csv": args.out, "layers": len(rows),
           "mean_mad": float(np.mean([r["mad"] for r in rows]))})


def _cmd_compare(args):
    config = _load_config(args)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    try:
        p_grid = [float(v) for v in args.p_grid.split(",") if v.strip()]
        seeds = [int(v) for v in args.seeds.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --p-grid or --seeds value: {exc}") from exc
    rows = experiment.compare_strategies(config, strategies, p_grid, seeds,
                                         csv_path=args.out)
    _emit({"csv": args.out, "rows": rows})


_COMMANDS = {"pipeline": _cmd_pipeline, "train": _cmd_train, "prune": _cmd_prune,
             "eval": _cmd_eval, "stats": _cmd_stats, "compare": _cmd_compare}


def _exit_code(exc):
    cause = exc.__cause__ if isinstance(exc, PipelineStageError) and exc.__cause__ else exc
    if isinstance(cause, (NumericError, ArithmeticError)):
        return 2
    if isinstance(cause, DataFormatError):
        return 3
    if isinstance(cause, OSError):
        return 3
    return 1  # usage / config / validation


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _COMMANDS[args.command](args)
        return 0
    except (ConfigError, ValueError, ArithmeticError, OSError, PipelineStageError) as exc:
        print(f"camphive: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
