"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
versions in ``_fallback`` are used. Setting ``GRAVCOLLAPSE_BACKEND=python``
forces the fallback.
"""
import os

from . import _fallback

try:
    if os.environ.get("GRAVCOLLAPSE_BACKEND", "").lower() == "python":
        raise ImportError("fallback requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled


def get(name=None):
    """Module providing ``sse_chunk`` and ``relax_block`` for ``name`` (default: active)."""
    name = BACKEND if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
