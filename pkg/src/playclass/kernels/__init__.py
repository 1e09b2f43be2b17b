"""Hot mask kernels: compiled extension when built, pure Python otherwise.

Set ``PLAYCLASS_PURE=1`` to force the pure path (used by the benchmark and to
test both twins against each other).
"""
from __future__ import annotations

import os

from . import pure

try:
    from . import _native
except ImportError:
    _native = None

USING_NATIVE = _native is not None and os.environ.get("PLAYCLASS_PURE") != "1"

_impl = _native if USING_NATIVE else pure

trace_crack_loops = _impl.trace_crack_loops
convex_hull_sorted = _impl.convex_hull_sorted
rdp_keep = _impl.rdp_keep

__all__ = ["trace_crack_loops", "convex_hull_sorted", "rdp_keep",
           "USING_NATIVE", "pure", "_native"]
