"""JIT switch for the hot loops.

Set ``CLFLAB_DISABLE_NUMBA=1`` before import to run every kernel as plain
Python/numpy. Results agree with the compiled path to rounding; runtime does not.
"""
import os

_DISABLED = os.environ.get("CLFLAB_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
    literally = numba.literally

    def njit(fn):
        return numba.njit(cache=True, nogil=True)(fn)

except ImportError:
    NUMBA_ENABLED = False

    def literally(obj):
        return obj

    def njit(fn):
        return fn
