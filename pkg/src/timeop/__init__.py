"""Multi-scale temporal-kernel graph propagation for multimodal recommendation."""

from .config import ConfigError, RunConfig, parse_config
from .data import DataError, InteractionLog, TemporalSplit, load_features, load_interactions, make_temporal_split
from .evaluation import RankingReport, evaluate
from .model import Model, NumericError
from .operators import OperatorBank, build_bank, kernel
from .propagation import propagate, propagate_adjoint
from .training import TrainResult, train

__all__ = [
    "ConfigError", "RunConfig", "parse_config", "DataError", "InteractionLog", "TemporalSplit",
    "load_features", "load_interactions", "make_temporal_split", "RankingReport", "evaluate",
    "Model", "NumericError", "OperatorBank", "build_bank", "kernel", "propagate",
    "propagate_adjoint", "TrainResult", "train",
]
