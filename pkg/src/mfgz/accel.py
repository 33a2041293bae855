"""Numba availability probe and kernel backend selection.

Hot kernels (grid DP steps, Lax-Friedrichs updates, interpolation) exist in
two flavors: an @njit version and a pure-numpy one.  The numba path is the
default; setting MFGZ_FORCE_NUMPY=1 (or not having numba installed) selects
the numpy fallback.  MFGZ_THREADS caps the numba threading layer.
"""

import os

FORCE_NUMPY = os.environ.get("MFGZ_FORCE_NUMPY", "") not in ("", "0")

try:
    if FORCE_NUMPY:
        raise ImportError("numpy backend forced via MFGZ_FORCE_NUMPY")
    import numba as _nb
    from numba import njit

    NUMBA_ENABLED = True
    _threads = os.environ.get("MFGZ_THREADS")
    if _threads:
        try:
            _nb.set_num_threads(max(1, min(int(_threads), _nb.config.NUMBA_NUM_THREADS)))
        except (ValueError, RuntimeError):
            pass
except ImportError:
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        # transparent decorator so kernel modules import unchanged
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
