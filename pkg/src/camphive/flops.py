"""Per-layer FLOPs accounting for dense and conv2d layers.

conv2d: 2 * o_h * o_w * o_c * (k_h * k_w * i_c); dense: 2 * i_s * o_s.
Activation-only layers (relu, flatten, pool) cost 0. Unstructured sparsity
scales a layer's cost linearly by its surviving-weight fraction ("effective
FLOPs"); bias terms are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class LayerFlopsRow:
    layer: str
    dense_flops: int
    effective_flops: float
    surviving_fraction: float


@dataclass
class FlopsLedger:
    layers: list[LayerFlopsRow]
    total_dense: int
    total_effective: float
    reduction_pct: float

    def within_budget(self, budget):
        return self.total_effective <= budget

    def to_json_dict(self):
        return {"layers": [vars(r).copy() for r in self.layers],
                "total_dense": self.total_dense,
                "total_effective": self.total_effective,
                "reduction_pct": self.reduction_pct}


def conv2d_flops(o_h, o_w, o_c, k_h, k_w, i_c):
    dims = (o_h, o_w, o_c, k_h, k_w, i_c)
    if any(d < 1 for d in dims):
        raise ValueError(f"conv2d flops dims must be >= 1, got {dims}")
    return 2 * o_h * o_w * o_c * (k_h * k_w * i_c)


def dense_flops(i_s, o_s):
    if i_s < 1 or o_s < 1:
        raise ValueError(f"dense flops dims must be >= 1, got ({i_s}, {o_s})")
    return 2 * i_s * o_s


def ledger(net, mask=None):
    """FLOPs rows for every layer; `mask` (weight-space 0/1) shrinks effective cost."""
    surviving = {i: 1.0 for i, _ in net.weighted_layers()}
    if mask is not None:
        surviving = {i: float(v.mean()) for i, v in mask.layer_values(net).items()}
    shapes = net.output_shapes()
    rows = []
    for i, layer in enumerate(net.layers):
        if layer.kind == "dense":
            cost = dense_flops(layer.in_size, layer.out_size)
        elif layer.kind == "conv2d":
            o_h, o_w, o_c = shapes[i]
            k_h, k_w = layer.kernel
            cost = conv2d_flops(o_h, o_w, o_c, k_h, k_w, layer.in_channels)
        else:
            continue
        frac = surviving[i]
        rows.append(LayerFlopsRow(layer=net.layer_names[i], dense_flops=cost,
                                  effective_flops=cost * frac, surviving_fraction=frac))
    total_dense = sum(r.dense_flops for r in rows)
    total_effective = sum(r.effective_flops for r in rows)
    reduction = 100.0 * (1.0 - total_effective / total_dense) if total_dense else 0.0
    return FlopsLedger(layers=rows, total_dense=total_dense,
                       total_effective=total_effective, reduction_pct=reduction)
