"""Backend selection for the hot kernels.

Every kernel in the package exists twice: a loop version compiled with
``numba.njit`` and a vectorised pure-numpy version. The environment variable
``CBO_BACKEND`` picks one of them at import time::

    CBO_BACKEND=numba   # default when numba imports cleanly
    CBO_BACKEND=numpy   # pure numpy, no compilation

Both paths consume the same random numbers, so trajectories agree to
rounding error; they are not guaranteed to be bit-identical to each other.
"""

from __future__ import annotations

import functools
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_requested = os.environ.get("CBO_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"CBO_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

BACKEND = "numba" if (_requested == "numba" and HAS_NUMBA) else "numpy"
USE_NUMBA = BACKEND == "numba"

if HAS_NUMBA:
    jit = functools.partial(numba.njit, cache=True, nogil=True)
else:  # pragma: no cover

    def jit(fn=None, **_):
        if fn is None:
            return lambda f: f
        return fn


def select(numba_impl, numpy_impl):
    """Return the implementation matching the active backend."""
    return numba_impl if USE_NUMBA else numpy_impl
