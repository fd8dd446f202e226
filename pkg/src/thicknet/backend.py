"""Kernel backend selection: compiled extension if present, numpy otherwise.

THICKNET_KERNELS=python forces the numpy fallback, =compiled insists on
the extension (ImportError if it was not built). The chosen module is
exposed as `kernels`; everything above this layer is backend-agnostic.
"""

import os

from . import _kernels_py

_requested = os.environ.get("THICKNET_KERNELS", "").strip().lower()

_compiled = None
if _requested != "python":
    try:
        from . import _core as _compiled
    except ImportError:
        _compiled = None

if _requested == "compiled" and _compiled is None:
    raise ImportError(
        "THICKNET_KERNELS=compiled but the thicknet._core extension is not "
        "built; install with a C toolchain or unset the variable"
    )

kernels = _compiled if _compiled is not None else _kernels_py
backend_name = "compiled" if _compiled is not None else "python"


def available_backends():
    """Names of kernel backends importable in this environment."""
    names = ["python"]
    if _compiled is not None or _try_compiled() is not None:
        names.append("compiled")
    return names


def _try_compiled():
    try:
        from . import _core
        return _core
    except ImportError:
        return None


def get_kernels(name):
    """Fetch a kernel module by backend name (for tests and benchmarks)."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        mod = _compiled if _compiled is not None else _try_compiled()
        if mod is None:
            raise ImportError("compiled kernel backend is not available")
        return mod
    raise ValueError(f"unknown kernel backend {name!r}")
