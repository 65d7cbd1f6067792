"""Numba toggle.

Set ``MISC_RL_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""

import os

_OFF = {"1", "true", "yes", "on"}

try:
    import numba  # noqa: F401
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator


USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("MISC_RL_DISABLE_NUMBA", "").strip().lower() not in _OFF

__all__ = ["NUMBA_AVAILABLE", "USE_NUMBA", "njit"]
