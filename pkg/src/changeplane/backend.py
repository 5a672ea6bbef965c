"""Selects the sweep-kernel backend at import time.

The compiled Cython extension is preferred; the NumPy fallback is used when
the extension is missing or when the environment variable
CHANGEPLANE_PURE_PYTHON is set to a non-empty value.
"""
import os

from changeplane import _kernels_py

if os.environ.get("CHANGEPLANE_PURE_PYTHON"):
    kernels = _kernels_py
else:
    try:
        from changeplane import _kernels as kernels
    except ImportError:
        kernels = _kernels_py

COMPILED = bool(getattr(kernels, "COMPILED", False))


def active_backend():
    """Name of the backend in use ('compiled' or 'python')."""
    return "compiled" if COMPILED else "python"
