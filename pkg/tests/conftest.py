"""Shared oracles and builders for the test suite.

The oracles here are deliberately independent of the code paths they
check: gradients come from central differences of the loss, Hessians
from central differences of gradients, percentiles from sort-and-index.
"""

import numpy as np

from camphive.network import (Batch, Conv2D, Dense, Flatten, MaxPool2x2, Network,
                              ReLU, flatten_params, forward, unflatten_params)


def fd_gradient(net, batch, h=1e-4):
    """Central-difference gradient of the loss over the full parameter vector."""
    w0 = flatten_params(net)
    grad = np.zeros_like(w0)
    for j in range(w0.size):
        wp = w0.copy()
        wp[j] += h
        unflatten_params(net, wp)
        lp, _ = forward(net, batch)
        wm = w0.copy()
        wm[j] -= h
        unflatten_params(net, wm)
        lm, _ = forward(net, batch)
        grad[j] = (lp - lm) / (2 * h)
    unflatten_params(net, w0)
    return grad


def explicit_weight_hessian(model, calib, h=1e-5):
    """Explicit Hessian over the weight space, column by column, from
    central differences of analytic gradients; symmetrized."""
    w0 = model.weight_vector()
    n = w0.size
    hess = np.zeros((n, n))
    for j in range(n):
        wp = w0.copy()
        wp[j] += h
        model.set_weight_vector(wp)
        gp = model.weight_gradient(calib)
        wm = w0.copy()
        wm[j] -= h
        model.set_weight_vector(wm)
        gm = model.weight_gradient(calib)
        hess[:, j] = (gp - gm) / (2 * h)
    model.set_weight_vector(w0)
    return 0.5 * (hess + hess.T)


def dominant_eig(hess):
    """(eigenvalue, eigenvector) of largest |eigenvalue| of a symmetric matrix."""
    vals, vecs = np.linalg.eigh(hess)
    k = int(np.argmax(np.abs(vals)))
    return float(vals[k]), vecs[:, k]


class QuadraticModel:
    """Loss 0.5 * w^T A w with exact gradient A w; duck-types a Network
    for the curvature code. The calibration batch argument is ignored."""

    def __init__(self, a_matrix, w):
        self.a_matrix = np.asarray(a_matrix, dtype=np.float64)
        self.w = np.asarray(w, dtype=np.float64).copy()

    def weight_vector(self):
        return self.w.copy()

    def set_weight_vector(self, vec):
        self.w = np.asarray(vec, dtype=np.float64).copy()

    def weight_gradient(self, calib):
        return self.a_matrix @ self.w


class LinearModel:
    """Loss c^T w: constant gradient, zero curvature everywhere."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=np.float64)
        self.w = np.zeros_like(self.c)

    def weight_vector(self):
        return self.w.copy()

    def set_weight_vector(self, vec):
        self.w = np.asarray(vec, dtype=np.float64).copy()

    def weight_gradient(self, calib):
        return self.c.copy()


def small_mlp(in_size=3, hidden=4, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    net = Network([Dense(in_size, hidden, rng=rng), ReLU(),
                   Dense(hidden, classes, rng=rng)], (in_size,))
    return net


def small_conv_net(seed=0, classes=3):
    """Every layer kind in one net: conv2d, relu, maxpool, flatten, dense (97 params)."""
    rng = np.random.default_rng(seed)
    layers = [Conv2D(1, 2, kernel=(3, 3), stride=1, padding="same", rng=rng),
              ReLU(), MaxPool2x2(), Flatten(), Dense(18, classes, rng=rng)]
    return Network(layers, (6, 6, 1))


def random_batch(net, n=8, seed=0):
    rng = np.random.default_rng(seed)
    inputs = rng.normal(size=(n,) + net.input_shape)
    labels = rng.integers(0, net.num_classes, size=n)
    return Batch(inputs, labels, net.num_classes)
