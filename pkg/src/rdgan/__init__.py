"""Recurrent-deconvolutional GAN toolkit for text-conditioned video synthesis."""

from .errors import (
    ConfigError,
    DataError,
    FormatError,
    InputError,
    NumericError,
    RDGANError,
    ShapeError,
    TransplantError,
    UsageError,
)
from .rng import Rng
from .tensor import ParameterSet, Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "InputError",
    "NumericError",
    "ParameterSet",
    "RDGANError",
    "Rng",
    "ShapeError",
    "Tape",
    "Tensor",
    "TransplantError",
    "UsageError",
    "backward",
    "__version__",
]
