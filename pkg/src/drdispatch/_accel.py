"""Numba availability switch.

Set ``DRDISPATCH_NO_NUMBA=1`` to force the pure-numpy kernels even when
numba is installed (useful for debugging and for the benchmark).
"""

import os

_DISABLED = os.environ.get("DRDISPATCH_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


def backend_name():
    return "numba" if NUMBA_AVAILABLE else "numpy"
