"""Kernel backend selection.

The compiled extension is used when importable. ``GGNAM_BACKEND=python``
forces the numpy fallback; ``GGNAM_BACKEND=compiled`` makes a missing
extension an import error instead of a silent fallback.
"""

import os

from . import _kernels_py

_requested = os.environ.get("GGNAM_BACKEND", "auto").lower()

if _requested not in ("auto", "python", "compiled"):
    raise ImportError(f"GGNAM_BACKEND must be auto, python or compiled, got {_requested!r}")

kernels = _kernels_py
name = "python"

if _requested != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _requested == "compiled":
            raise
    else:
        kernels = _compiled
        name = "compiled"


def get(backend=None):
    """Return a kernel module by name (``None`` means the active one)."""
    if backend is None:
        return kernels
    if backend == "python":
        return _kernels_py
    if backend == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {backend!r}")
