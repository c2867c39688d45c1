"""Noise-robust keypoint-graph matching.

Contrastive embedding training with graph-consistency terms, made
robust to corrupted annotations by a momentum teacher that soft-labels
the contrastive targets and down-weights untrustworthy keypoints.
Exact (Hungarian) and entropic (Sinkhorn) assignment decoders, a
seeded synthetic benchmark with controllable corruption, and an
sklearn-style estimator facade on top.
"""

from .assignment import (
    Assignment,
    hungarian,
    matching_accuracy,
    qap_objective,
    sinkhorn,
    smoothed_linear_loss,
    structured_linear_loss,
)
from .encoder import EncoderParams, ema_update, forward, init_params
from .estimator import GraphMatcher, check_pairs
from .evaluation import (
    BenchmarkConfig,
    ablation_grid,
    evaluate,
    make_benchmark,
    mean_similarities,
    predict,
    run_cell,
    similarity_histogram,
    sweep_noise,
    write_plot_script,
    write_sweep_csv,
)
from .losses import (
    LossConfig,
    LossReport,
    edge_confidence,
    infonce,
    node_confidence,
    quadratic_loss,
    robust_quadratic,
)
from .synthetic import (
    Category,
    GraphPair,
    NoiseConfig,
    align_keypoints,
    generate_pair,
    inject_noise,
    load_dataset,
    make_category,
    make_dataset,
    save_dataset,
)
from .trainer import TrainConfig, TrainState, train

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BenchmarkConfig",
    "Category",
    "EncoderParams",
    "GraphMatcher",
    "GraphPair",
    "LossConfig",
    "LossReport",
    "NoiseConfig",
    "TrainConfig",
    "TrainState",
    "ablation_grid",
    "align_keypoints",
    "check_pairs",
    "edge_confidence",
    "ema_update",
    "evaluate",
    "forward",
    "generate_pair",
    "hungarian",
    "infonce",
    "init_params",
    "inject_noise",
    "load_dataset",
    "make_benchmark",
    "make_category",
    "make_dataset",
    "matching_accuracy",
    "mean_similarities",
    "node_confidence",
    "predict",
    "qap_objective",
    "quadratic_loss",
    "robust_quadratic",
    "run_cell",
    "save_dataset",
    "similarity_histogram",
    "sinkhorn",
    "smoothed_linear_loss",
    "structured_linear_loss",
    "sweep_noise",
    "train",
    "write_plot_script",
    "write_sweep_csv",
]
