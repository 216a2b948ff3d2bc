"""Numba switch.

Set ``DMLCRF_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba is
not importable the numpy path is used regardless.
"""

import os
import warnings

_DISABLED = os.environ.get("DMLCRF_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

# old system TBB; numba falls back to another threading layer by itself
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:
    from numba import get_num_threads, njit, prange

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator

    prange = range

    def get_num_threads():
        return 1


USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def backend_name(use_numba=None):
    if use_numba is None:
        use_numba = USE_NUMBA
    return "numba" if use_numba else "numpy"
