"""Acceptance suite: one test per criterion, at the stated tolerances.

Each test prints a single `[acceptance] <name>: PASS/FAIL` line (run with
`pytest -s tests/test_acceptance.py` to see them) and also enforces the
criterion's runtime budget.
"""

import copy
import json
import math
import time

import numpy as np
import pytest

from conftest import (QuadraticModel, dominant_eig, explicit_weight_hessian,
                      fd_gradient, random_batch, small_conv_net, small_mlp)

from camphive.curvature import hvp_fd, power_iteration
from camphive.data import load_dataset
from camphive.experiment import ExperimentConfig, prepare_features, run_pipeline, train
from camphive.flops import conv2d_flops, dense_flops, ledger
from camphive.network import flatten_params, loss_and_gradient, mlp, sgd_step, tinyconv
from camphive.pruning import (cyclic_index, merge_cyclic, merge_random, partition,
                              percentile_threshold, prune)

# Reference desk-scale task: separable blobs where fine-tuning can fully
# recover, mirroring the small post-prune accuracy deltas the method targets.
REFERENCE_CONFIG = {
    "seed": 0,
    "dataset": {"kind": "synthetic-blobs", "classes": 3, "samples": 600,
                "features": 16, "cluster_std": 1.0, "seed": 7},
    "model": {"kind": "mlp", "hidden": 32},
    "train": {"epochs": 20, "lr": 0.5, "batch_size": 32},
    "prune": {"strategy": "camp-hive", "p": 50},
    "finetune": {"epochs": 10, "lr": 0.5},
    "latency_repeats": 3,
}


def reference_config(**updates):
    raw = copy.deepcopy(REFERENCE_CONFIG)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key].update(value)
        else:
            raw[key] = value
    return ExperimentConfig.from_dict(raw)


class _Criterion:
    """Collects sub-checks, prints one PASS/FAIL line, enforces the budget."""

    def __init__(self, name, budget_s):
        self.name = name
        self.budget_s = budget_s
        self.failures = []
        self.started = time.perf_counter()

    def check(self, ok, detail):
        if not ok:
            self.failures.append(detail)

    def conclude(self):
        elapsed = time.perf_counter() - self.started
        status = "PASS" if not self.failures and elapsed < self.budget_s else "FAIL"
        extra = "" if not self.failures else " | " + "; ".join(self.failures[:4])
        print(f"[acceptance] {self.name}: {status} ({elapsed:.2f}s / budget {self.budget_s:.0f}s){extra}")
        assert not self.failures, self.failures
        assert elapsed < self.budget_s, f"runtime {elapsed:.2f}s exceeds {self.budget_s}s"


def test_01_gradient_correctness():
    crit = _Criterion("1 gradient correctness (every layer kind)", 10)
    for builder, seed in ((small_mlp, 3), (small_conv_net, 4)):
        net = builder(seed=seed)
        assert net.num_params <= 100
        batch = random_batch(net, n=4, seed=seed)
        _, grad = loss_and_gradient(net, batch)
        oracle = fd_gradient(net, batch, h=1e-4)
        rel = np.max(np.abs(grad - oracle) / np.maximum(np.abs(oracle), 1e-6))
        crit.check(rel <= 1e-3, f"{builder.__name__}: rel err {rel:.2e} > 1e-3")
    crit.conclude()


def test_02_hvp_oracle():
    crit = _Criterion("2 HVP vs explicit Hessian", 30)
    net = mlp(3, 5, 3, seed=12)  # 38 params
    assert net.num_params <= 60
    calib = random_batch(net, n=24, seed=12)
    hess = explicit_weight_hessian(net, calib)
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.normal(size=net.num_weights)
        v /= np.linalg.norm(v)
        hv = hvp_fd(net, calib, v)
        oracle = hess @ v
        rel = np.linalg.norm(hv - oracle) / np.linalg.norm(oracle)
        crit.check(rel <= 1e-2, f"mlp rel err {rel:.2e} > 1e-2")
    quad = QuadraticModel(np.diag([2.0, 1.0, 0.5]), [0.4, -1.0, 0.7])
    for eps in (1e-3, 1e-1, None):
        v = rng.normal(size=3)
        hv = hvp_fd(quad, None, v, eps)
        oracle = quad.a_matrix @ v
        rel = np.linalg.norm(hv - oracle) / np.linalg.norm(oracle)
        crit.check(rel <= 1e-9, f"quadratic rel err {rel:.2e} > 1e-9 at eps={eps}")
    crit.conclude()


def test_03_eigenvector_recovery():
    crit = _Criterion("3 eigenvector recovery on trained MLP", 60)
    tr, _ = load_dataset({"kind": "synthetic-blobs", "classes": 3, "samples": 400,
                          "features": 4, "cluster_std": 1.5, "seed": 3})
    net = mlp(4, 8, 3, seed=0)
    assert net.num_params <= 80
    train(net, tr, epochs=15, lr=0.5, batch_size=32, seed=1)
    calib = tr.take(512, seed=2).batch()
    probe = power_iteration(net, calib, max_iterations=300, tol=1e-12, seed=1)
    top_val, top_vec = dominant_eig(explicit_weight_hessian(net, calib))
    cosine = abs(float(np.dot(probe.v, top_vec)))
    rel = abs(probe.rayleigh - top_val) / abs(top_val)
    crit.check(cosine >= 0.99, f"cosine {cosine:.4f} < 0.99")
    crit.check(rel <= 0.02, f"rayleigh rel err {rel:.2e} > 2%")
    crit.conclude()


def test_04_merge_conservation():
    crit = _Criterion("4 weight-sum conservation over 1000 random layers", 10)
    rng = np.random.default_rng(7)
    zero_sum_violations = 0
    for _ in range(1000):
        n = int(rng.integers(2, 120))
        weights = rng.normal(size=n)
        sigma = rng.random(n)
        p = float(rng.uniform(1, 99))
        part = partition(sigma, percentile_threshold(sigma, p))
        before = math.fsum(weights)
        merged_c, _ = merge_cyclic(weights.copy(), part)
        merged_r, _ = merge_random(weights.copy(), part, rng)
        crit.check(abs(math.fsum(merged_c) - before) <= 1e-6, "camp-hive sum drift")
        crit.check(abs(math.fsum(merged_r) - before) <= 1e-6, "hrp sum drift")
        zeroed = weights.copy()
        zeroed[part.L] = 0.0  # hmp / magnitude action
        dropped = math.fsum(weights[part.L])
        if abs(dropped) > 1e-9:
            if abs(math.fsum(zeroed) - before) <= 1e-9:
                zero_sum_violations += 1
    crit.check(zero_sum_violations == 0,
               f"zeroing preserved sums in {zero_sum_violations} nonzero-L cases")
    crit.conclude()


def test_05_cyclic_fairness_exhaustive():
    crit = _Criterion("5 cyclic in-degree spread <= 1 for all l, s <= 64", 5)
    worst = 0
    for s in range(1, 65):
        for l in range(1, 65):
            degrees = np.zeros(s, dtype=int)
            for i in range(1, l + 1):
                degrees[cyclic_index(i, s) - 1] += 1
            worst = max(worst, int(degrees.max() - degrees.min()))
    crit.check(worst <= 1, f"max in-degree spread {worst} > 1")
    crit.conclude()


def test_06_sparsity_and_flops_targeting():
    crit = _Criterion("6 sparsity / FLOPs targeting + formula table", 5)
    crit.check(conv2d_flops(8, 8, 4, 3, 3, 3) == 13824, "conv formula != 13824")
    crit.check(dense_flops(128, 10) == 2560, "dense formula != 2560")
    tc = tinyconv((28, 28), 1, (8, 16), 10, seed=0)
    first = ledger(tc).layers[0].dense_flops
    crit.check(first == 112896, f"tinyconv first-layer flops {first} != 112896")

    net = mlp(16, 32, 3, seed=5)
    calib = random_batch(net, n=64, seed=5)
    for p in (30, 50, 70, 80):
        pruned, mask, report = prune(net, "camp-hive", p, calib=calib, seed=p)
        for row in report.layers:
            # inclusive 1/n_k bound, with float-rounding slack at the boundary
            crit.check(abs(row.sparsity - p / 100.0) <= 1.0 / row.n_k + 1e-12,
                       f"p={p} {row.layer}: sparsity {row.sparsity:.3f} off target")
        led = ledger(pruned, mask)
        by_counts = 100.0 * (1.0 - sum(
            r.dense_flops * mask.layer_values(pruned)[i].mean()
            for (i, _), r in zip(pruned.weight_slices(), led.layers)) / led.total_dense)
        crit.check(abs(led.reduction_pct - by_counts) <= 0.1,
                   f"p={p}: ledger {led.reduction_pct:.3f} vs counts {by_counts:.3f}")
    crit.conclude()


def test_07_mask_persistence_200_steps():
    crit = _Criterion("7 mask persistence over 200 masked fine-tune steps", 30)
    net = small_mlp(in_size=8, hidden=12, classes=3, seed=9)
    calib = random_batch(net, n=32, seed=9)
    pruned, mask, _ = prune(net, "camp-hive", 50, calib=calib, seed=0)
    param_mask = mask.param_mask(pruned)
    batch = random_batch(pruned, n=32, seed=10)
    for _ in range(200):
        _, grad = loss_and_gradient(pruned, batch)
        sgd_step(pruned, grad, lr=0.1, mask=param_mask)
    masked = np.abs(flatten_params(pruned)[param_mask == 0.0])
    crit.check(masked.size > 0, "no masked coordinates")
    crit.check(float(masked.max(initial=0.0)) == 0.0,
               f"masked coords regrew to {masked.max(initial=0.0):.3e}")
    crit.conclude()


def test_08_strategy_ordering():
    crit = _Criterion("8 strategy ordering at p=50 over 5 seeds", 600)
    means, deltas = {}, {}
    for strategy in ("camp-hive", "hmp", "magnitude"):
        accs, ds = [], []
        for seed in range(5):
            cfg = reference_config().with_overrides(seed=seed, strategy=strategy, p=50)
            acc = run_pipeline(cfg)["accuracy"]
            accs.append(acc["pruned_post_finetune"]["top1"])
            ds.append(acc["delta_top1_post_finetune"])
        means[strategy] = float(np.mean(accs))
        deltas[strategy] = float(np.mean(ds))
    crit.check(means["camp-hive"] >= means["hmp"],
               f"camp-hive {means['camp-hive']:.2f} < hmp {means['hmp']:.2f}")
    crit.check(means["camp-hive"] >= means["magnitude"],
               f"camp-hive {means['camp-hive']:.2f} < magnitude {means['magnitude']:.2f}")
    crit.check(deltas["camp-hive"] >= -1.0,
               f"camp-hive mean delta {deltas['camp-hive']:.2f} < -1.0")
    crit.conclude()


def test_09_mad_sanity():
    crit = _Criterion("9 MAD: zero at p=0, grows from p=30 to p=80", 300)
    report = run_pipeline(reference_config(prune={"p": 0}))
    for row in report["probe_stats"]["layers"]:
        crit.check(row["mad"] == 0.0, f"{row['layer']}: MAD {row['mad']} != 0 at p=0")
    mean_mad = {}
    for p in (30, 80):
        per_seed = []
        for seed in range(5):
            cfg = reference_config(finetune={"epochs": 0}).with_overrides(seed=seed, p=p)
            rep = run_pipeline(cfg)
            per_seed.append(np.mean([r["mad"] for r in rep["probe_stats"]["layers"]]))
        mean_mad[p] = float(np.mean(per_seed))
    crit.check(mean_mad[80] >= mean_mad[30],
               f"MAD p=80 {mean_mad[80]:.4f} < p=30 {mean_mad[30]:.4f}")
    crit.conclude()


def test_10_report_determinism(tmp_path):
    crit = _Criterion("10 byte-identical reports modulo timing fields", 300)
    path = tmp_path / "report.json"
    cfg = reference_config(report_path=str(path))
    stripped = []
    for _ in range(2):
        run_pipeline(cfg)
        parsed = json.loads(path.read_bytes())
        parsed.pop("timestamp")
        parsed.pop("latency_ms")
        stripped.append(json.dumps(parsed, indent=2, sort_keys=True).encode())
    crit.check(stripped[0] == stripped[1], "reports differ beyond timing fields")
    crit.conclude()


def test_11_crash_free_sweep():
    # camp-cli invariant: the full strategy x percentile x seed grid completes.
    crit = _Criterion("11 crash-free 4x4x5 sweep", 600)
    cfg = reference_config(dataset={"samples": 300}, train={"epochs": 6},
                           finetune={"epochs": 3})
    completed = 0
    for strategy in ("camp-hive", "hrp", "hmp", "magnitude"):
        for p in (30, 50, 70, 80):
            for seed in range(5):
                run = cfg.with_overrides(seed=seed, strategy=strategy, p=p)
                report = run_pipeline(run)
                crit.check(report["status"] == "complete",
                           f"{strategy}/p={p}/seed={seed} incomplete")
                completed += 1
    crit.check(completed == 80, f"only {completed}/80 runs completed")
    crit.conclude()
