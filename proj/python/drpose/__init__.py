"""Diffusion-based refinement of 2D-to-3D human pose lifting.

Thin bindings over the C++ core. Arrays are float64 numpy arrays in
millimeters (3D) or pixels (2D); configs are passed as key = value text.
"""

from ._drpose import *  # noqa: F401,F403
from ._drpose import DataError, UsageError

__all__ = [name for name in dir() if not name.startswith("_")]
