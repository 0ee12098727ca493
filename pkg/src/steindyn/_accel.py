"""Backend selection for the hot kernels.

Set ``STEINDYN_BACKEND=numpy`` to force the pure-numpy path; numba is used
otherwise when importable.
"""
import os

BACKEND_ENV = "STEINDYN_BACKEND"

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def use_numba():
    return HAVE_NUMBA and os.environ.get(BACKEND_ENV, "numba").lower() != "numpy"


def njit(*args, **kwargs):
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def deco(fn):
        return fn
    return deco(args[0]) if args and callable(args[0]) else deco
