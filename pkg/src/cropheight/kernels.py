"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when
``CROPHEIGHT_PURE_PYTHON=1`` is set, the NumPy fallback is used.
"""
import os

from . import _fallback

if os.environ.get("CROPHEIGHT_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback

cast_rays = _impl.cast_rays
ransac_counts = _impl.ransac_counts


def backends():
    """Mapping of available backend name to module, compiled first."""
    found = {}
    if _compiled is not None:
        found["compiled"] = _compiled
    else:
        try:
            from . import _kernels

            found["compiled"] = _kernels
        except ImportError:
            pass
    found["python"] = _fallback
    return found
