"""Backend selection for the compiled kernels.

Set ``FREQSEP_DISABLE_JIT=1`` before import to force the pure-numpy path.
"""
import os

_FLAG = "FREQSEP_DISABLE_JIT"

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None

jit_disabled = os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not jit_disabled
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
