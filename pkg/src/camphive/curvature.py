"""Dominant-curvature estimation via finite-difference Hessian-vector products.

The loss Hessian is never materialized: Hv is approximated by
(grad(w + eps*v) - grad(w)) / eps and power iteration drives v toward the
eigenvector of largest-magnitude eigenvalue. Per-weight significance is the
component magnitude |v_j| of the converged direction.

All functions operate over the weight-only flat vector. Anything exposing
``weight_vector() / set_weight_vector(v) / weight_gradient(batch)`` works,
so tests can substitute analytic quadratic models for real networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCurvatureError, NumericError, ShapeError

DEGENERATE_NORM = 1e-12


@dataclass
class CurvatureProbe:
    """Converged power-iteration state over the prunable weights."""

    v: np.ndarray                 # unit-norm direction
    rayleigh: float               # v . Hv at exit
    iterations_run: int
    cosine_trace: list[float]     # cosine(v_new, v) per iteration
    seed: int
    epsilon: float

    def summary(self, net=None):
        out = {"seed": self.seed, "epsilon": self.epsilon, "rayleigh": self.rayleigh,
               "iterations_run": self.iterations_run,
               "cosine_trace": [float(c) for c in self.cosine_trace]}
        if net is not None:
            sig = significance(self, net)
            out["layer_significance"] = {
                net.layer_names[i]: {"min": float(s.min()), "mean": float(s.mean()),
                                     "max": float(s.max())}
                for i, s in sig.per_layer.items()}
        return out


@dataclass
class SignificanceMap:
    """Per-layer |v| components, keyed by layer index in the network."""

    per_layer: dict[int, np.ndarray] = field(default_factory=dict)

    def concat(self):
        return np.concatenate([self.per_layer[k] for k in sorted(self.per_layer)])


def default_epsilon(w):
    """Perturbation scale 1e-3 * max(1, ||w||_inf): guards cancellation and truncation."""
    return 1e-3 * max(1.0, float(np.abs(w).max())) if w.size else 1e-3


def hvp_fd(model, calib, v, epsilon=None):
    """Forward-difference Hessian-vector product (grad(w+eps*v) - grad(w)) / eps.

    Restores the model's weights bit-exactly before returning.
    """
    v = np.asarray(v, dtype=np.float64)
    w0 = model.weight_vector()
    if v.shape != w0.shape:
        raise ShapeError(f"v has shape {v.shape}, weights have shape {w0.shape}")
    vnorm = float(np.linalg.norm(v))
    if vnorm < DEGENERATE_NORM:
        raise ValueError(f"direction norm {vnorm:.3e} is (near-)zero")
    if epsilon is None:
        epsilon = default_epsilon(w0)
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    try:
        g0 = model.weight_gradient(calib)
        model.set_weight_vector(w0 + epsilon * v)
        g1 = model.weight_gradient(calib)
    finally:
        model.set_weight_vector(w0)
    hv = (g1 - g0) / epsilon
    if not np.isfinite(hv).all():
        raise NumericError(
            f"non-finite Hessian-vector product at epsilon={epsilon:.3e}; "
            "try a larger or smaller epsilon")
    return hv


def power_iteration(model, calib, max_iterations=10, tol=1e-6, seed=0, epsilon=None):
    """Estimate the dominant curvature direction of the loss over the weights.

    Iterates v <- normalize(Hv) from a seeded Rademacher start and stops when
    cosine(v_new, v) >= 1 - tol or after max_iterations. The Rayleigh value
    v.Hv is evaluated once more at exit.
    """
    if max_iterations < 1:
        raise ValueError(f"max_iterations must be >= 1, got {max_iterations}")
    if not (0.0 < tol < 1.0):
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    w0 = model.weight_vector()
    if w0.size == 0:
        raise ValueError("model has no prunable weights")
    if epsilon is None:
        epsilon = default_epsilon(w0)
    rng = np.random.default_rng(seed)
    v = rng.integers(0, 2, size=w0.size).astype(np.float64) * 2.0 - 1.0
    v /= np.linalg.norm(v)
    cosine_trace = []
    iterations = 0
    for it in range(1, max_iterations + 1):
        hv = hvp_fd(model, calib, v, epsilon)
        norm = float(np.linalg.norm(hv))
        if norm < DEGENERATE_NORM:
            raise DegenerateCurvatureError(it)
        v_new = hv / norm
        cosine = float(np.dot(v_new, v))
        cosine_trace.append(cosine)
        v = v_new
        iterations = it
        if cosine >= 1.0 - tol:
            break
    rayleigh = float(np.dot(v, hvp_fd(model, calib, v, epsilon)))
    return CurvatureProbe(v=v, rayleigh=rayleigh, iterations_run=iterations,
                          cosine_trace=cosine_trace, seed=seed, epsilon=float(epsilon))


def significance(probe, net):
    """Split |probe.v| into per-layer significance vectors."""
    v = np.asarray(getattr(probe, "v", probe), dtype=np.float64)
    if v.shape != (net.num_weights,):
        raise ShapeError(f"probe direction length {v.shape} != ({net.num_weights},)")
    return SignificanceMap({i: np.abs(v[sl]) for i, sl in net.weight_slices()})
