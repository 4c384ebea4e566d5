"""Optional numba acceleration.

Set ``ERSPIN_DISABLE_NUMBA=1`` to force the pure-numpy code paths (useful for
debugging and for benchmarking the two backends against each other).
"""

import os

_DISABLED = os.environ.get("ERSPIN_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None

if HAVE_NUMBA and "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is often too old and only produces a warning
    numba.config.THREADING_LAYER = "omp"
USE_NUMBA = HAVE_NUMBA and not _DISABLED

JIT_OPTIONS = {"nogil": True, "cache": True}


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise identity."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    opts = {**JIT_OPTIONS, **kwargs}
    if args and callable(args[0]):
        return numba.njit(**opts)(args[0])
    return numba.njit(**opts)


if HAVE_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range
