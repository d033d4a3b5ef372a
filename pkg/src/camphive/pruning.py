"""Turn per-weight significance into a pruned network.

Per layer: a nearest-rank percentile threshold splits weights into a
significant set S (sigma >= theta, ordered by descending sigma) and a
less-significant set L (sigma < theta, ordered ascending). Depending on
strategy, L weights are merged into S targets (cyclically or at random)
before being zeroed, or simply zeroed. A binary mask records the pruned
coordinates so fine-tuning cannot regrow them.

Strategies: camp-hive (curvature + cyclic merge), hrp (curvature + random
merge), hmp (curvature, zero only), magnitude (|w|, zero only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import curvature as curv
from .errors import ShapeError

STRATEGIES = ("camp-hive", "hrp", "hmp", "magnitude")
MERGING_STRATEGIES = ("camp-hive", "hrp")


@dataclass
class Partition:
    """S/L index split of one layer's weights at threshold theta.

    S is ordered by descending sigma (ties by ascending index) so position 1
    is the most significant weight; L is ordered by ascending sigma.
    """

    S: np.ndarray
    L: np.ndarray
    theta: float


@dataclass
class PairingMap:
    """(source L weight index, target S weight index) per merged weight."""

    pairs: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class PruneMask:
    """0/1 vector over the weight-only flat view; 0 marks pruned coords."""

    values: np.ndarray

    @property
    def sparsity(self):
        return float(1.0 - self.values.mean()) if self.values.size else 0.0

    def param_mask(self, net):
        """Expand to the full parameter vector; biases stay trainable (1)."""
        if self.values.shape != (net.num_weights,):
            raise ShapeError(f"mask length {self.values.shape} != ({net.num_weights},)")
        full = np.ones(net.num_params, dtype=np.float64)
        full[net.param_weight_mask()] = self.values
        return full

    def layer_values(self, net):
        return {i: self.values[sl] for i, sl in net.weight_slices()}


@dataclass
class LayerPruneRow:
    layer: str
    n_k: int
    theta: float
    s: int
    l: int
    sparsity: float
    weight_sum_before: float
    weight_sum_after: float


@dataclass
class PruneReport:
    strategy: str
    p: float
    seed: int
    layers: list[LayerPruneRow]
    total_sparsity: float
    significance: "curv.SignificanceMap"
    partitions: dict[int, Partition]
    pairings: dict[int, PairingMap]
    curvature: dict | None = None

    def to_json_dict(self):
        return {
            "strategy": self.strategy,
            "p": self.p,
            "seed": self.seed,
            "total_sparsity": self.total_sparsity,
            "layers": [vars(row).copy() for row in self.layers],
            "curvature": self.curvature,
        }


def percentile_threshold(sigma, p):
    """Nearest-rank percentile: the r-th smallest value, r = max(1, ceil(p/100 * n))."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0:
        raise ValueError("cannot take a percentile of an empty significance vector")
    if not (0.0 <= p <= 100.0):
        raise ValueError(f"percentile must lie in [0, 100], got {p}")
    r = max(1, math.ceil(p / 100.0 * sigma.size))
    return float(np.sort(sigma)[r - 1])


def partition(sigma, theta):
    sigma = np.asarray(sigma, dtype=np.float64)
    idx = np.arange(sigma.size)
    keep = sigma >= theta
    s_idx = idx[keep]
    l_idx = idx[~keep]
    # stable sorts give ascending-index tie-breaks in both orderings
    s_idx = s_idx[np.argsort(-sigma[s_idx], kind="stable")]
    l_idx = l_idx[np.argsort(sigma[l_idx], kind="stable")]
    return Partition(S=s_idx, L=l_idx, theta=float(theta))


def cyclic_index(i, s):
    """1-based target position j = (i mod s) + 1 for the i-th merged weight."""
    if s < 1:
        raise ValueError("cannot merge: layer has no significant weights (s = 0)")
    if i < 1:
        raise ValueError(f"merge position i must be >= 1, got {i}")
    return (i % s) + 1


def merge_cyclic(weights, part):
    """Fold every L weight into its cyclic S target, then zero the sources.

    Accumulation preserves the layer's weight sum up to float associativity.
    """
    weights = np.asarray(weights, dtype=np.float64)
    s = len(part.S)
    pairing = PairingMap()
    if len(part.L) and s < 1:
        cyclic_index(1, s)  # raises the s = 0 error
    for pos, src in enumerate(part.L, start=1):
        dst = part.S[cyclic_index(pos, s) - 1]
        weights[dst] += weights[src]
        weights[src] = 0.0
        pairing.pairs.append((int(src), int(dst)))
    return weights, pairing


def merge_random(weights, part, rng):
    """Fold every L weight into a uniformly random S target (seeded)."""
    weights = np.asarray(weights, dtype=np.float64)
    s = len(part.S)
    pairing = PairingMap()
    if len(part.L) and s < 1:
        cyclic_index(1, s)
    for src in part.L:
        dst = part.S[rng.integers(0, s)]
        weights[dst] += weights[src]
        weights[src] = 0.0
        pairing.pairs.append((int(src), int(dst)))
    return weights, pairing


def build_mask(partitions, net):
    """Binary mask over the weight vector: 0 exactly at each layer's L indices."""
    values = np.ones(net.num_weights, dtype=np.float64)
    for i, sl in net.weight_slices():
        part = partitions[i]
        layer_mask = np.ones(sl.stop - sl.start, dtype=np.float64)
        layer_mask[part.L] = 0.0
        values[sl] = layer_mask
    return PruneMask(values=values)


def prune(net, strategy, p, *, calib=None, seed=0, max_iterations=10, tol=1e-6,
          epsilon=None):
    """Prune a clone of `net`; returns (pruned network, mask, report).

    Curvature-scored strategies (camp-hive, hrp, hmp) need a calibration
    batch; magnitude scores by |w| and does not.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if not (0.0 <= p <= 100.0):
        raise ValueError(f"pruning percentile must lie in [0, 100], got {p}")

    pruned = net.clone()
    seeds = np.random.SeedSequence(seed).spawn(2)
    probe_seed = int(seeds[0].generate_state(1)[0])
    hrp_rng = np.random.default_rng(seeds[1])

    curvature_summary = None
    if strategy in ("camp-hive", "hrp", "hmp"):
        if calib is None:
            raise ValueError(f"strategy {strategy!r} needs a calibration batch")
        probe = curv.power_iteration(pruned, calib, max_iterations=max_iterations,
                                     tol=tol, seed=probe_seed, epsilon=epsilon)
        sig = curv.significance(probe, pruned)
        curvature_summary = probe.summary(pruned)
    else:
        sig = curv.SignificanceMap(
            {i: np.abs(pruned.layers[i].weights.ravel()) for i, _ in pruned.weighted_layers()})

    partitions = {}
    pairings = {}
    rows = []
    for i, layer in pruned.weighted_layers():
        sigma = sig.per_layer[i]
        theta = percentile_threshold(sigma, p)
        part = partition(sigma, theta)
        w = layer.weights.ravel().copy()
        before = float(w.sum())
        if strategy == "camp-hive":
            w, pairing = merge_cyclic(w, part)
        elif strategy == "hrp":
            w, pairing = merge_random(w, part, hrp_rng)
        else:  # hmp / magnitude: zero out, no merging
            w[part.L] = 0.0
            pairing = PairingMap()
        layer.weights = w.reshape(layer.weights.shape)
        partitions[i] = part
        pairings[i] = pairing
        rows.append(LayerPruneRow(
            layer=pruned.layer_names[i], n_k=sigma.size, theta=part.theta,
            s=len(part.S), l=len(part.L), sparsity=len(part.L) / sigma.size,
            weight_sum_before=before, weight_sum_after=float(w.sum())))

    mask = build_mask(partitions, pruned)
    pruned.set_weight_vector(pruned.weight_vector() * mask.values)  # no-op by construction
    report = PruneReport(strategy=strategy, p=float(p), seed=seed, layers=rows,
                         total_sparsity=mask.sparsity, significance=sig,
                         partitions=partitions, pairings=pairings,
                         curvature=curvature_summary)
    return pruned, mask, report
