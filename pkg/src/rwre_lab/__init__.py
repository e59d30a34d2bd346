"""Lattice laboratory for balanced random walks in random environments."""
__version__ = "0.1.0"

from .backend import kernels as _kernels

BACKEND = _kernels.BACKEND

__all__ = ["BACKEND", "__version__"]
