"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python ``_pykernels`` module is used. Set ``LPS_PURE_PYTHON=1`` to force
the fallback.
"""
from __future__ import annotations

import os

from lps import _pykernels

if os.environ.get("LPS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from lps import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND: str = _impl.BACKEND
lsap = _impl.lsap
contrastive = _impl.contrastive


def available_backends() -> dict:
    """Map backend name to kernel module for every importable backend."""
    backends = {"python": _pykernels}
    try:
        from lps import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends
