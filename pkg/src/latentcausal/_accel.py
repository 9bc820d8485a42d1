"""JIT switch.

Kernels in :mod:`latentcausal.kernels` come in pairs: a numba-compiled
version and a pure-numpy version. Setting ``LATENTCAUSAL_NO_NUMBA=1`` in the
environment (or running without numba installed) selects the numpy path.
"""

import os

_FLAG = "LATENTCAUSAL_NO_NUMBA"

try:
    import numba as _nb

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    _nb = None
    NUMBA_AVAILABLE = False


def numba_enabled() -> bool:
    if not NUMBA_AVAILABLE:
        return False
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    if NUMBA_AVAILABLE:
        return _nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func
