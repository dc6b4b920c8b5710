"""Monte Carlo laboratory for 3D Brownian non-intersection: exact kernel
functionals (switching constant, extremal total variation, maximal coupling),
cone/sausage geometry with uncovered-cone search and escape polylines,
walk-on-spheres harmonic measure in slit shells, cover-time bounds, and
intersection-exponent estimation."""

from ._backend import BACKEND, HAVE_NUMBA
from .rng import RngStream

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAVE_NUMBA", "RngStream", "__version__"]
