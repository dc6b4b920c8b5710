"""Backend selection for the hot numeric kernels.

The simulation kernels exist twice: a numba @njit implementation and a pure
numpy one.  Set BIMLAB_BACKEND=numpy to force the fallback (no numba import at
all), BIMLAB_BACKEND=numba to fail loudly if numba is unavailable.  Default is
numba when importable.
"""

import os

_requested = os.environ.get("BIMLAB_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        "BIMLAB_BACKEND must be 'numba' or 'numpy', got %r" % _requested
    )

if _requested == "numpy":
    HAVE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"
