"""Variance-reduced extragradient solvers for bilinear saddle-point problems."""

from .geometry import CompositeTerm, Point, Setup, SetupKind
from .matrix import SparseMatrix, generate_random, load_matrix_market

__version__ = "0.1.0"

__all__ = ["CompositeTerm", "Point", "Setup", "SetupKind", "SparseMatrix",
           "generate_random", "load_matrix_market"]
