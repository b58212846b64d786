"""Backend switch for the compiled kernels.

Set ``ICDC_DISABLE_NUMBA=1`` before import to force the pure-numpy paths.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and os.environ.get("ICDC_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

_JIT_OPTS = {"nopython": True, "nogil": True, "cache": True, "error_model": "numpy"}


def njit(fn):
    """Compile ``fn`` with numba when available, else return it untouched."""
    if not HAS_NUMBA:
        return fn
    return numba.jit(**_JIT_OPTS)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
