"""Granger-causal graph discovery with an adjacency-masked variable-token transformer."""

from .config import ModelConfig, OptimizerConfig, RunConfig, load_config, preset
from .datagen import CausalDataset, GroundTruthGraph, gen_lorenz96, gen_mixed_physics, gen_var
from .metrics import auroc, auprc, evaluate_graph
from .model import MaskedForecaster
from .training import train

__version__ = "0.1.0"

__all__ = [
    "CausalDataset", "GroundTruthGraph", "MaskedForecaster", "ModelConfig", "OptimizerConfig",
    "RunConfig", "auprc", "auroc", "evaluate_graph", "gen_lorenz96", "gen_mixed_physics",
    "gen_var", "load_config", "preset", "train",
]
