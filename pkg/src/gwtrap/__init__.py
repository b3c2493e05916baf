"""gwtrap: Monte Carlo and exact-oracle laboratory for randomly biased
random walks on supercritical Galton-Watson trees with leaves."""

__version__ = "0.1.0"

from ._kernels import BACKEND, HAS_NUMBA  # noqa: F401
