"""Optional numba acceleration.

Set ``PEDCC_DISABLE_NUMBA=1`` to force the pure-numpy kernels. If numba is not
importable the numpy kernels are used silently.
"""

import os

DISABLED = os.environ.get("PEDCC_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover - depends on the environment
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise the identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
