"""Desk-scale multimodal brain-signal foundation model in plain numpy."""

from .config import DataConfig, FinetuneConfig, ModelConfig, RunConfig, TrainConfig
from .errors import (
    BrainOFError,
    CapacityError,
    ConfigError,
    DegenerateMaskError,
    DimensionError,
    DivergenceError,
    InputError,
    NumericError,
)
from .estimators import BrainOFClassifier, BrainOFRegressor, MTFMPretrainer, check_signals
from .model import BrainOF, LinearHead
from .signal import Modality, Signal, generate_synthetic, normalize, patchify

__version__ = "0.1.0"

__all__ = [
    "BrainOF",
    "BrainOFClassifier",
    "BrainOFError",
    "BrainOFRegressor",
    "CapacityError",
    "ConfigError",
    "DataConfig",
    "DegenerateMaskError",
    "DimensionError",
    "DivergenceError",
    "FinetuneConfig",
    "InputError",
    "LinearHead",
    "MTFMPretrainer",
    "Modality",
    "ModelConfig",
    "NumericError",
    "RunConfig",
    "Signal",
    "TrainConfig",
    "check_signals",
    "generate_synthetic",
    "normalize",
]
