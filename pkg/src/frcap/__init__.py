"""Fisher-Rao norm and norm-based capacity measures for rectified networks."""

from .capacity import (Empirical, ModelSampled, NormReport, capacity_summary, fr_norm_crossentropy,
                       fr_norm_fisher, fr_norm_identity, norm_comparison_report, path_norm,
                       spectral_product)
from .data import Dataset, load_csv, load_idx, make_synthetic
from .losses import LossKind
from .network import (Activation, Network, convex_combine, forward, init_network,
                      nodewise_rescale, predict)
from .optimize import TrainConfig, check_large_margin, check_linear_stationarity, train
from .rademacher import linear_fr_rademacher

__version__ = "0.1.0"

__all__ = [
    "Activation", "Network", "forward", "predict", "init_network", "nodewise_rescale",
    "convex_combine", "LossKind", "Empirical", "ModelSampled", "fr_norm_identity",
    "fr_norm_fisher", "fr_norm_crossentropy", "spectral_product", "path_norm",
    "norm_comparison_report", "NormReport", "capacity_summary", "TrainConfig", "train",
    "check_large_margin", "check_linear_stationarity", "linear_fr_rademacher", "Dataset",
    "load_csv", "load_idx", "make_synthetic",
]
