"""Locally resonant acoustic metamaterial panel design toolkit."""

__version__ = "0.1.0"

from .grid import StructuredGrid, build_grid, build_rect_grid  # noqa: F401
from .materials import (  # noqa: F401
    MaterialPhase,
    InterpolationScheme,
    builtin_materials,
    isotropic_tensors,
    interpolate,
)
