"""Zygmund-dilation multiresolution toolkit on finite periodic grids."""

from .lattice import DyadicInterval, GridSpec, LatticeShift, ZygRect
from .haar import GridFunction, inner, zygmund_expand, reconstruct

__version__ = "0.1.0"
