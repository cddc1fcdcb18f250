"""Optional numba acceleration.

Hot kernels are decorated with :func:`jit`. Setting ``MMTCDET_BACKEND=numpy``
before import turns the decorator into a no-op so the same kernels run as
plain numpy/python (slow, but useful for cross-checking and for platforms
without numba).
"""
import os

BACKEND = os.environ.get("MMTCDET_BACKEND", "numba").strip().lower()

try:
    if BACKEND == "numpy":
        raise ImportError
    import numba

    USING_NUMBA = True

    def jit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)

except ImportError:
    USING_NUMBA = False
    BACKEND = "numpy"

    def jit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
