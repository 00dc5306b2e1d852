"""Kernel backend selection.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
pure-Python ``_pykernels`` are used.  Setting ``EJCBF_BACKEND=python`` forces
the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("EJCBF_BACKEND", "").lower() == "python":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]
    except ImportError:  # extension not built
        kernels = _pykernels

BACKEND = kernels.BACKEND


def available() -> dict:
    """Map backend name -> kernel module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        return out
    out["cython"] = _ckernels
    return out
