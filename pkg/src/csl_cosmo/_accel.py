"""Optional numba acceleration.

Set ``CSL_COSMO_NO_NUMBA=1`` in the environment before import to run every
kernel as plain numpy/Python code. Results are bit-compatible up to floating
point reassociation inside numba's loop vectorisation.
"""

import os

_DISABLED = os.environ.get("CSL_COSMO_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit, prange

    HAS_NUMBA = True
    jit = njit(cache=True, fastmath=False, error_model="numpy")
    jit_parallel = njit(cache=True, fastmath=False, parallel=True, error_model="numpy")
except ImportError:
    HAS_NUMBA = False
    prange = range

    def jit(f):
        return f

    jit_parallel = jit


def set_threads(n):
    """Limit the numba thread pool; a no-op on the fallback path."""
    if n is None or not HAS_NUMBA:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def backend_name():
    return "numba" if HAS_NUMBA else "numpy"
