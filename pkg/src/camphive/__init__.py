"""Curvature-guided cyclic pair-merge pruning for small feed-forward nets."""

from .analysis import activation_stats, evaluate, mad
from .curvature import CurvatureProbe, SignificanceMap, hvp_fd, power_iteration, significance
from .data import Dataset, load_dataset
from .flops import FlopsLedger, conv2d_flops, dense_flops, ledger
from .network import (Batch, Conv2D, Dense, Flatten, MaxPool2x2, Network, ReLU,
                      backward, flatten_params, forward, load_checkpoint,
                      loss_and_gradient, mlp, save_checkpoint, sgd_step, tinyconv,
                      unflatten_params)
from .pruning import (STRATEGIES, Partition, PruneMask, PruneReport, build_mask,
                      cyclic_index, merge_cyclic, partition, percentile_threshold,
                      prune)
from .experiment import (ExperimentConfig, compare_strategies, run_pipeline,
                         time_inference, train)

__version__ = "0.1.0"
