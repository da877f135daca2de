"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when it was built; otherwise the
NumPy implementations in ``_kernels_py`` are used.  Set the environment
variable ``QUADRIC_DETECT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

VOTED = _kernels_py.VOTED
ILL_CONDITIONED = _kernels_py.ILL_CONDITIONED
GATE_REJECTED = _kernels_py.GATE_REJECTED

_compiled = None
if not os.environ.get("QUADRIC_DETECT_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

vote_candidates = _impl.vote_candidates
inlier_mask = _impl.inlier_mask
foot_points = _impl.foot_points


def backends():
    """Available implementations keyed by name."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
