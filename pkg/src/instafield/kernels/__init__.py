"""Kernel backend dispatch.

The env var INSTAFIELD_BACKEND selects the implementation:
  "numba" (default when importable), "numpy" (pure-numpy fallback).
Both backends share the same contracts and agree to float tolerance;
see benchmarks/bench_kernels.py for a speed comparison.
"""

from __future__ import annotations

import os

_requested = os.environ.get("INSTAFIELD_BACKEND", "auto").strip().lower()

if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"INSTAFIELD_BACKEND={_requested!r}: expected 'numba' or 'numpy'")

if _requested == "numpy":
    from . import numpy_impl as _impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_impl as _impl

BACKEND_NAME = _impl.BACKEND_NAME
trilinear_gather = _impl.trilinear_gather
render_core = _impl.render_core
channel_sums = _impl.channel_sums
indicator_sums = _impl.indicator_sums
scatter_weighted = _impl.scatter_weighted
radiance_backward = _impl.radiance_backward
set_num_threads = _impl.set_num_threads
