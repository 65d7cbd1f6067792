"""Hot numeric kernels, dispatched to numba or numpy.

The numba path is used unless ``MISC_RL_DISABLE_NUMBA`` is set (see
``misc_rl._jit``). Both backends stay importable as ``numpy_backend`` and
``numba_backend`` so they can be compared directly.
"""

from .._jit import USE_NUMBA
from . import _numpy as numpy_backend

if USE_NUMBA:
    from . import _numba as numba_backend

    _active = numba_backend
else:
    numba_backend = None
    _active = numpy_backend

BACKEND = "numba" if USE_NUMBA else "numpy"

ACTIVATIONS = {"identity": 0, "relu": 1, "tanh": 2}

dense_forward = _active.dense_forward
dense_backward = _active.dense_backward
adam_update = _active.adam_update
polyak = _active.polyak
logsumexp = _active.logsumexp
pair_dv = _active.pair_dv
push_step = _active.push_step

__all__ = [
    "ACTIVATIONS",
    "BACKEND",
    "adam_update",
    "dense_backward",
    "dense_forward",
    "logsumexp",
    "numba_backend",
    "numpy_backend",
    "pair_dv",
    "polyak",
    "push_step",
]
