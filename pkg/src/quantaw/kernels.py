"""Kernel backend selection.

Prefers the compiled extension, falls back to pure numpy.  Set
QUANTAW_PURE_PYTHON=1 before import to force the fallback (useful for
benchmarking and for ruling the extension out when debugging).
"""

import os

if os.environ.get("QUANTAW_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
quantize_batch = _impl.quantize_batch
simulate_path = _impl.simulate_path


def available_backends():
    """Names of the kernel implementations importable right now."""
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def load_backend(name):
    """Return the kernel module for ``name`` ("compiled" or "python")."""
    if name == "python":
        from . import _kernels_py
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
