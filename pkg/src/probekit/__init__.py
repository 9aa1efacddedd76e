"""Randomized probing of seismic Hessians with pseudodifferential symbol fits."""
from .errors import (
    ConfigError,
    DivergenceError,
    FormatError,
    InstabilityError,
    NumericalError,
    ProbekitError,
)
from .grid import ModelGrid, mse

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DivergenceError",
    "FormatError",
    "InstabilityError",
    "ModelGrid",
    "NumericalError",
    "ProbekitError",
    "mse",
]
