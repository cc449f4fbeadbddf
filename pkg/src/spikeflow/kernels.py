"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Setting ``SPIKEFLOW_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _pykernels

_FORCE_PY = os.environ.get("SPIKEFLOW_PURE_PYTHON", "").strip() not in ("", "0")

if _FORCE_PY:
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
lif_forward = _impl.lif_forward
lif_backward = _impl.lif_backward
deposit_events = _impl.deposit_events


def compiled_available():
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


def get_backend(name):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
