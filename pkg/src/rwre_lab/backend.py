"""Kernel backend selection.

The compiled extension is used when it imports; ``RWRE_BACKEND=python``
forces the numpy fallback (useful for debugging and for the benchmark).
"""
from __future__ import annotations

import os

from . import _pykernels

_forced = os.environ.get("RWRE_BACKEND", "").strip().lower()

kernels = _pykernels
if _forced != "python":
    try:
        from . import _ckernels as _ck  # type: ignore[attr-defined]
        kernels = _ck
    except ImportError:
        if _forced == "cython":
            raise

BACKEND = kernels.BACKEND


def get(name: str):
    """Return a kernel module by name: ``"python"``, ``"cython"`` or ``"auto"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels  # type: ignore[attr-defined]
        return _ckernels
    return kernels
