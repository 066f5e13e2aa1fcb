"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension (``_core``) is used when it was built; otherwise the
pure numpy module is loaded.  Setting ``XTNET_PURE_PYTHON=1`` forces the
fallback.  ``BACKEND`` names the active implementation.
"""

import os

from . import _fallback

if os.environ.get("XTNET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "compiled" if _impl is not _fallback else "python"

sinkhorn_forward = _impl.sinkhorn_forward
sinkhorn_backward = _impl.sinkhorn_backward
mckp_dp = _impl.mckp_dp


def backends():
    """Return ``{name: module}`` for every importable implementation."""
    out = {"python": _fallback}
    try:
        from . import _core
    except ImportError:
        return out
    out["compiled"] = _core
    return out


__all__ = ["BACKEND", "backends", "mckp_dp", "sinkhorn_backward", "sinkhorn_forward"]
