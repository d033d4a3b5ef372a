"""Information-retention probes: activation statistics, mean absolute
deviation between a base and a pruned model, and accuracy evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .network import forward


@dataclass
class LayerStats:
    layer: str
    min: float
    max: float
    mean: float


def _activations(net, probe):
    if len(probe) < 1:
        raise ValueError("probe batch is empty")
    _, acts = forward(net, probe)
    return acts


def activation_stats(net, probe):
    """Per-layer (min, max, mean) of every layer's output over the probe batch."""
    acts = _activations(net, probe)
    return [LayerStats(layer=net.layer_names[i], min=float(a.min()),
                       max=float(a.max()), mean=float(a.mean()))
            for i, a in enumerate(acts)]


def mad(base_net, pruned_net, probe):
    """Per-layer mean |a_base - a_pruned| over all elements and probe samples."""
    if base_net.manifest() != pruned_net.manifest():
        raise ShapeError("mad() needs identical architectures")
    base_acts = _activations(base_net, probe)
    pruned_acts = _activations(pruned_net, probe)
    return {base_net.layer_names[i]: float(np.mean(np.abs(a - b)))
            for i, (a, b) in enumerate(zip(base_acts, pruned_acts))}


def evaluate(net, dataset):
    """Top-1 (and top-5 when there are >= 5 classes) accuracy in percent."""
    features, labels = dataset.features, dataset.labels
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = net.predict(features)
    # stable descending order so constant logits rank classes by index
    order = np.argsort(-logits, axis=1, kind="stable")
    top1 = 100.0 * float(np.mean(order[:, 0] == labels))
    result = {"top1": top1, "top5": None}
    if net.num_classes >= 5:
        result["top5"] = 100.0 * float(np.mean((order[:, :5] == labels[:, None]).any(axis=1)))
    return result


def probe_rows(base_net, pruned_net, probe):
    """Rows combining both models' activation stats with the per-layer MAD."""
    base_stats = activation_stats(base_net, probe)
    pruned_stats = activation_stats(pruned_net, probe)
    mads = mad(base_net, pruned_net, probe)
    rows = []
    for b, p in zip(base_stats, pruned_stats):
        rows.append({"layer": b.layer,
                     "baseline": {"min": b.min, "max": b.max, "mean": b.mean},
                     "pruned": {"min": p.min, "max": p.max, "mean": p.mean},
                     "mad": mads[b.layer]})
    return rows


def write_stats_csv(rows, path):
    """CSV with one row per layer: pruned-model stats plus MAD vs the base."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "min", "max", "mean", "mad"])
        for row in rows:
            writer.writerow([row["layer"], row["pruned"]["min"], row["pruned"]["max"],
                             row["pruned"]["mean"], row["mad"]])
