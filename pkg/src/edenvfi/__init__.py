"""Dual-encoder (transformer + CNN) video frame interpolation built on a small numpy autograd."""

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    EdenError,
    NumericError,
    TapeError,
    TrainingError,
    WeightsFormatError,
)
from .gradcheck import grad_check
from .model import EdenVFI, ModelConfig, build_model, count_parameters
from .synthesis import SynthesisMaps, blend_baseline, edsc_apply
from .tensor import Tape, Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "EdenError",
    "EdenVFI",
    "ModelConfig",
    "NumericError",
    "SynthesisMaps",
    "Tape",
    "TapeError",
    "Tensor",
    "TrainingError",
    "WeightsFormatError",
    "backward",
    "blend_baseline",
    "build_model",
    "count_parameters",
    "edsc_apply",
    "grad_check",
    "no_grad",
]
