"""Pseudospectral simulator and diagnostics for half-wave maps into S^2 and H^2."""
from . import analysis, dynamics, geometry, spectral, synthetic, waveform
from .errors import (
    ConfigurationError,
    DegenerateFieldError,
    DivergenceError,
    DomainError,
    HwmapError,
    NumericalError,
    ResourceError,
    SnapshotError,
)
from .geometry import TargetSpec
from .kernels import BACKEND
from .spectral import Grid
from .trajectory import Trajectory

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigurationError",
    "DegenerateFieldError",
    "DivergenceError",
    "DomainError",
    "Grid",
    "HwmapError",
    "NumericalError",
    "ResourceError",
    "SnapshotError",
    "TargetSpec",
    "Trajectory",
    "analysis",
    "dynamics",
    "geometry",
    "spectral",
    "synthetic",
    "waveform",
]
