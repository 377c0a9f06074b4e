"""Hyperbolic cross-domain recommendation with curvature-aware contrastive transfer."""

from .data import CrossDomainDataset, InteractionGraph, SyntheticConfig, gen_synthetic, load_interactions
from .errors import DataError, HCTSError, InvariantViolation, NumericFailure, UsageError
from .evaluation import EvalReport, evaluate
from .model import ModelParams, init_params, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainHistory, train

__all__ = [
    "CrossDomainDataset", "InteractionGraph", "SyntheticConfig", "gen_synthetic", "load_interactions",
    "DataError", "HCTSError", "InvariantViolation", "NumericFailure", "UsageError",
    "EvalReport", "evaluate", "ModelParams", "init_params", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "TrainHistory", "train",
]
__version__ = "0.1.0"
