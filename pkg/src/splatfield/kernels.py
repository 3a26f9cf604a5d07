"""Backend selection for the splatting kernels.

The compiled extension is used when it was built; otherwise the NumPy
implementation is used. Setting ``SPLATFIELD_PURE_PYTHON=1`` forces the
fallback.
"""

import os

from . import _kernels_py

if os.environ.get("SPLATFIELD_PURE_PYTHON", "") not in ("", "0"):
    _ext = None
else:
    try:
        from . import _kernels_ext as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "numpy"
_impl = _ext if _ext is not None else _kernels_py

forward = _impl.forward
backward = _impl.backward


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "numpy" or None for the active one)."""
    if name is None:
        return _impl
    if name == "numpy":
        return _kernels_py
    if name == "cython":
        if _ext is None:
            raise ImportError("compiled kernels are not built")
        return _ext
    raise ValueError(f"unknown backend {name!r}")
