"""Batch experiment driver: config parsing, training, the full
train -> prune -> fine-tune -> evaluate pipeline, strategy comparison
grids, latency timing, and JSON report emission.

Every stochastic component is keyed to the config seed through a fixed
SeedSequence spawn order, so identical config + seed reproduces the run
byte-for-byte (timing fields aside).
"""

from __future__ import annotations

import copy
import csv
import importlib.resources
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import jsonschema
import numpy as np

from . import analysis, flops, pruning
from .data import Dataset, load_dataset
from .errors import ConfigError, PipelineStageError
from .network import loss_and_gradient, mlp, sgd_step, tinyconv

CONFIG_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1

# SeedSequence spawn order for the run seed; changing this changes runs.
_SEED_CHILDREN = ("model_init", "train_shuffle", "calib_subset",
                  "prune", "finetune_shuffle", "probe_subset")


def _child_seeds(seed):
    children = np.random.SeedSequence(seed).spawn(len(_SEED_CHILDREN))
    return {name: int(c.generate_state(1)[0]) for name, c in zip(_SEED_CHILDREN, children)}


@dataclass
class TrainSpec:
    epochs: int = 20
    lr: float = 0.001
    batch_size: int = 32


@dataclass
class FinetuneSpec:
    epochs: int = 10
    lr: float = 0.001


@dataclass
class PruneSpec:
    strategy: str = "camp-hive"
    p: float = 50.0
    epsilon: dict = field(default_factory=lambda: {"mode": "auto"})
    power_iteration: dict = field(default_factory=lambda: {
        "max_iterations": 10, "tol": 1e-6, "calib_size": 512})
    flops_budget: float | None = None

    def epsilon_value(self):
        mode = self.epsilon.get("mode", "auto")
        if mode == "auto":
            return None
        if mode == "fixed":
            value = self.epsilon.get("value")
            if not value or value <= 0:
                raise ConfigError("fixed epsilon policy needs a positive 'value'")
            return float(value)
        raise ConfigError(f"unknown epsilon mode {mode!r}")


@dataclass
class ExperimentConfig:
    seed: int
    dataset: dict
    model: dict
    train: TrainSpec = field(default_factory=TrainSpec)
    prune: PruneSpec = field(default_factory=PruneSpec)
    finetune: FinetuneSpec = field(default_factory=FinetuneSpec)
    probe_size: int = 256
    latency_repeats: int = 10
    report_path: str | None = None

    _KNOWN_KEYS = {"schema_version", "seed", "dataset", "model", "train", "prune",
                   "finetune", "probe_size", "latency_repeats", "report_path"}

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - cls._KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        version = raw.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        if "seed" not in raw:
            raise ConfigError("config needs an explicit top-level 'seed'")
        for key in ("dataset", "model"):
            if key not in raw or not isinstance(raw[key], dict):
                raise ConfigError(f"config needs a '{key}' object")
        cfg = cls(seed=int(raw["seed"]),
                  dataset=copy.deepcopy(raw["dataset"]),
                  model=copy.deepcopy(raw["model"]),
                  train=TrainSpec(**raw.get("train", {})),
                  prune=PruneSpec(**raw.get("prune", {})),
                  finetune=FinetuneSpec(**raw.get("finetune", {})),
                  probe_size=int(raw.get("probe_size", 256)),
                  latency_repeats=int(raw.get("latency_repeats", 10)),
                  report_path=raw.get("report_path"))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        if self.dataset.get("seed") is None:
            raise ConfigError("dataset spec needs an explicit 'seed'")
        if self.model.get("kind") not in ("mlp", "tinyconv"):
            raise ConfigError(f"model kind must be mlp or tinyconv, got {self.model.get('kind')!r}")
        if self.prune.strategy not in pruning.STRATEGIES:
            raise ConfigError(f"prune strategy must be one of {pruning.STRATEGIES}, "
                              f"got {self.prune.strategy!r}")
        if not (0.0 <= self.prune.p <= 100.0):
            raise ConfigError(f"prune.p must lie in [0, 100], got {self.prune.p}")
        for name, spec in (("train", self.train),):
            if spec.epochs < 0 or spec.lr <= 0 or spec.batch_size < 1:
                raise ConfigError(f"bad {name} spec: {spec}")
        if self.finetune.epochs < 0 or self.finetune.lr <= 0:
            raise ConfigError(f"bad finetune spec: {self.finetune}")
        if self.probe_size < 1:
            raise ConfigError("probe_size must be >= 1")
        if self.latency_repeats < 3:
            raise ConfigError("latency_repeats must be >= 3")
        self.prune.epsilon_value()

    def to_dict(self):
        return {"schema_version": CONFIG_SCHEMA_VERSION, "seed": self.seed,
                "dataset": copy.deepcopy(self.dataset), "model": copy.deepcopy(self.model),
                "train": vars(self.train).copy(), "prune": {
                    "strategy": self.prune.strategy, "p": self.prune.p,
                    "epsilon": copy.deepcopy(self.prune.epsilon),
                    "power_iteration": copy.deepcopy(self.prune.power_iteration),
                    "flops_budget": self.prune.flops_budget},
                "finetune": vars(self.finetune).copy(), "probe_size": self.probe_size,
                "latency_repeats": self.latency_repeats, "report_path": self.report_path}

    def with_overrides(self, *, seed=None, strategy=None, p=None, report_path="keep"):
        raw = self.to_dict()
        if seed is not None:
            raw["seed"] = int(seed)
        if strategy is not None:
            raw["prune"]["strategy"] = strategy
        if p is not None:
            raw["prune"]["p"] = p
        if report_path != "keep":
            raw["report_path"] = report_path
        return ExperimentConfig.from_dict(raw)


# ---- model construction ----

def prepare_features(dataset, model_spec):
    """Reshape raw dataset features to the model's input layout."""
    x = dataset.features
    n = x.shape[0]
    if model_spec["kind"] == "mlp":
        return dataset.with_features(x.reshape(n, -1))
    shape = model_spec.get("image_shape")
    if shape is not None:
        h, w, c = shape
    elif x.ndim == 3:
        h, w, c = x.shape[1], x.shape[2], 1
    elif x.ndim == 4:
        h, w, c = x.shape[1], x.shape[2], x.shape[3]
    else:
        raise ConfigError("tinyconv needs image-shaped data or model.image_shape")
    if h * w * c != int(np.prod(x.shape[1:])):
        raise ConfigError(f"cannot reshape features {x.shape[1:]} to image {h}x{w}x{c}")
    return dataset.with_features(x.reshape(n, h, w, c))


def build_model(model_spec, train_data, seed):
    classes = train_data.num_classes
    if model_spec["kind"] == "mlp":
        in_size = train_data.features.shape[1]
        return mlp(in_size, int(model_spec.get("hidden", 128)), classes, seed=seed)
    h, w, c = train_data.features.shape[1:]
    channels = model_spec.get("channels", [8, 16])
    return tinyconv((h, w), c, tuple(channels), classes, seed=seed)


def train(net, data, *, epochs, lr, batch_size, seed, mask=None):
    """Seeded mini-batch SGD; returns per-epoch mean loss. Mutates net."""
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        losses = []
        for batch in data.minibatches(batch_size, rng):
            loss, grad = loss_and_gradient(net, batch)
            sgd_step(net, grad, lr, mask=mask)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def time_inference(net, probe, repeats):
    """Wall-clock forward latency in ms over `repeats` passes (1 warm-up excluded)."""
    if repeats < 3:
        raise ValueError(f"latency timing needs repeats >= 3, got {repeats}")
    net.predict(probe.inputs)  # warm-up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        net.predict(probe.inputs)
        samples.append((time.perf_counter() - t0) * 1000.0)
    arr = np.asarray(samples)
    return float(arr.mean()), float(arr.std())


# ---- report plumbing ----

def report_schema():
    text = importlib.resources.files("camphive").joinpath("report_schema.json").read_text()
    return json.loads(text)


def validate_report(report):
    jsonschema.validate(report, report_schema())


def write_report(report, path):
    validate_report(report)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def _empty_report(config):
    return {"schema_version": REPORT_SCHEMA_VERSION, "status": "incomplete",
            "stage_error": None, "config": config.to_dict(), "accuracy": None,
            "flops": None, "prune": None, "probe_stats": None,
            "train_history": None, "latency_ms": None,
            "timestamp": datetime.now(timezone.utc).isoformat()}


def run_pipeline(config):
    """Full experiment: train, prune, fine-tune, evaluate, report.

    Any stage failure writes a partial report (status incomplete) when a
    report path is configured, then raises a stage-tagged error.
    """
    report = _empty_report(config)
    seeds = _child_seeds(config.seed)
    stage = "load-data"
    try:
        train_raw, test_raw = load_dataset(config.dataset)

        stage = "build-model"
        train_data = prepare_features(train_raw, config.model)
        test_data = prepare_features(test_raw, config.model)
        net = build_model(config.model, train_data, seeds["model_init"])

        stage = "train-baseline"
        baseline_loss = train(net, train_data, epochs=config.train.epochs,
                              lr=config.train.lr, batch_size=config.train.batch_size,
                              seed=seeds["train_shuffle"])

        stage = "evaluate-baseline"
        baseline_acc = analysis.evaluate(net, test_data)

        stage = "prune"
        pi = config.prune.power_iteration
        calib = train_data.take(int(pi.get("calib_size", 512)), seeds["calib_subset"]).batch()
        pruned, mask, prune_report = pruning.prune(
            net, config.prune.strategy, config.prune.p, calib=calib,
            seed=seeds["prune"], max_iterations=int(pi.get("max_iterations", 10)),
            tol=float(pi.get("tol", 1e-6)),
            epsilon=config.prune.epsilon_value())
        report["prune"] = prune_report.to_json_dict()

        stage = "evaluate-pruned"
        pruned_acc = analysis.evaluate(pruned, test_data)

        stage = "probe-stats"
        probe = test_data.take(config.probe_size, seeds["probe_subset"]).batch()
        report["probe_stats"] = {"layers": analysis.probe_rows(net, pruned, probe)}

        stage = "flops"
        ledger = flops.ledger(pruned, mask)
        flops_dict = ledger.to_json_dict()
        budget = config.prune.flops_budget
        flops_dict["budget"] = (None if budget is None else
                                {"value": float(budget), "within": bool(ledger.within_budget(budget))})
        report["flops"] = flops_dict

        stage = "finetune"
        finetune_loss = train(pruned, train_data, epochs=config.finetune.epochs,
                              lr=config.finetune.lr, batch_size=config.train.batch_size,
                              seed=seeds["finetune_shuffle"], mask=mask.param_mask(pruned))
        report["train_history"] = {"baseline_loss": baseline_loss,
                                   "finetune_loss": finetune_loss}

        stage = "evaluate-finetuned"
        final_acc = analysis.evaluate(pruned, test_data)
        report["accuracy"] = {
            "baseline": baseline_acc,
            "pruned_pre_finetune": pruned_acc,
            "pruned_post_finetune": final_acc,
            "delta_top1_pre_finetune": pruned_acc["top1"] - baseline_acc["top1"],
            "delta_top1_post_finetune": final_acc["top1"] - baseline_acc["top1"],
        }

        stage = "latency"
        base_lat = time_inference(net, probe, config.latency_repeats)
        pruned_lat = time_inference(pruned, probe, config.latency_repeats)
        report["latency_ms"] = {"baseline": {"mean": base_lat[0], "std": base_lat[1]},
                                "pruned": {"mean": pruned_lat[0], "std": pruned_lat[1]}}

        stage = "report"
        report["status"] = "complete"
        if config.report_path:
            write_report(report, config.report_path)
    except Exception as exc:
        report["status"] = "incomplete"
        report["stage_error"] = {"stage": stage, "type": type(exc).__name__,
                                 "error": str(exc)}
        if config.report_path:
            try:
                write_report(report, config.report_path)
            except Exception:
                pass
        raise PipelineStageError(stage, exc)
    return report


def compare_strategies(config, strategies, p_grid, seeds, csv_path=None):
    """Accuracy-vs-p grid, mean +/- std over seeds, one row per (strategy, p)."""
    strategies = list(strategies)
    if len(strategies) < 2:
        raise ConfigError("compare needs at least 2 strategies")
    for s in strategies:
        if s not in pruning.STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}")
    if not p_grid or not seeds:
        raise ConfigError("compare needs a non-empty p grid and seed list")

    cells = {}
    for strategy in strategies:
        for p in p_grid:
            accs, deltas, baselines = [], [], []
            for seed in seeds:
                cfg = config.with_overrides(seed=seed, strategy=strategy, p=p,
                                            report_path=None)
                acc = run_pipeline(cfg)["accuracy"]
                baselines.append(acc["baseline"]["top1"])
                accs.append(acc["pruned_post_finetune"]["top1"])
                deltas.append(acc["delta_top1_post_finetune"])
            cells[(strategy, float(p))] = {
                "n_seeds": len(seeds),
                "baseline_mean": float(np.mean(baselines)),
                "acc_mean": float(np.mean(accs)), "acc_std": float(np.std(accs)),
                "delta_mean": float(np.mean(deltas)), "delta_std": float(np.std(deltas)),
            }

    rows = []
    for (strategy, p) in sorted(cells):  # deterministic merge order
        row = {"strategy": strategy, "p": p}
        row.update(cells[(strategy, p)])
        rows.append(row)
    if csv_path:
        write_compare_csv(rows, csv_path)
    return rows


def write_compare_csv(rows, path):
    cols = ["strategy", "p", "n_seeds", "baseline_mean", "acc_mean", "acc_std",
            "delta_mean", "delta_std"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
