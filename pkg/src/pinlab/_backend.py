"""Numba/numpy backend selection.

Hot kernels live in :mod:`pinlab.kernels` in two variants: an ``@njit``
compiled one and a pure-numpy one. Which variant a caller gets is decided
once at import time:

* numba missing entirely -> numpy path,
* environment variable ``PINLAB_NO_NUMBA=1`` -> numpy path,
* otherwise -> numba path.

``USE_NUMBA`` is the single switch the rest of the package reads.
"""

import os

try:
    import numba  # noqa: F401
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("PINLAB_NO_NUMBA", "0") != "1"


def njit(*args, **kwargs):
    """Pass-through decorator: numba.njit when active, identity otherwise."""
    if USE_NUMBA:
        import numba
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap
