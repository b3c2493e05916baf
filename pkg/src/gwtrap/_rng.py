"""Counter-based splittable random streams.

A stream is (key, counter); draw i of a stream is splitmix64's output at
counter i, so streams are reproducible, mergeable across workers, and
identical under both kernel backends. Substreams are derived from
(master_seed, replica, purpose) so that e.g. walk steps and snapshot traps
never share randomness.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K

# purpose tags for substream derivation
ENV = 1      # environment growth: offspring counts, interleaving, biases
WALK = 2     # walk transitions
TRAP = 3     # independent trap samples (snapshots, trap-tail batches)
ANALYSIS = 4  # bootstrap resampling, synthetic oracles
SIM_ENV = 5  # pair-simulation lazy backbone extension
SIM_WALK = 6  # pair-simulation walk transitions


def substream_key(master_seed: int, replica: int = 0, purpose: int = 0) -> np.uint64:
    with np.errstate(over="ignore"):
        k = K.mix64(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF))
        k = K.derive_key(k, np.uint64(purpose))
        k = K.derive_key(k, np.uint64(replica))
    return k


class Stream:
    """Mutable view over a (key, counter) pair for python-side sampling.

    key and ctr always re-coerce to np.uint64 on assignment: numba kernels
    hand uint64 results back as Python ints, and passing those into a kernel
    would silently compile an int64 specialization with float-promoting
    mixed arithmetic."""

    __slots__ = ("_key", "_ctr")

    def __init__(self, key: np.uint64, ctr: int = 0):
        self.key = key
        self.ctr = ctr

    @property
    def key(self) -> np.uint64:
        return self._key

    @key.setter
    def key(self, value):
        self._key = np.uint64(int(value) & 0xFFFFFFFFFFFFFFFF)

    @property
    def ctr(self) -> np.uint64:
        return self._ctr

    @ctr.setter
    def ctr(self, value):
        self._ctr = np.uint64(int(value) & 0xFFFFFFFFFFFFFFFF)

    @classmethod
    def from_seed(cls, master_seed: int, replica: int = 0, purpose: int = 0) -> "Stream":
        return cls(substream_key(master_seed, replica, purpose))

    def split(self, tag: int) -> "Stream":
        with np.errstate(over="ignore"):
            return Stream(K.derive_key(self.key, np.uint64(tag)))

    def u01(self) -> float:
        with np.errstate(over="ignore"):
            self.ctr = self.ctr + np.uint64(1)
            return float(K.rand_u01(self.key, self.ctr))

    def u64(self) -> int:
        with np.errstate(over="ignore"):
            self.ctr = self.ctr + np.uint64(1)
            return int(K.rand_u64(self.key, self.ctr))

    def integers(self, n: int) -> int:
        """Uniform on {0, ..., n-1} (rejection-free scaled draw; fine for
        the modest n used here)."""
        return min(int(self.u01() * n), n - 1)

    def exponential(self, mean: float = 1.0) -> float:
        return -mean * np.log1p(-self.u01())

    def bias(self, law) -> float:
        kind, vals, cdf, lo, hi = law.tables()
        u = self.u01()
        if kind == 0:
            return float(vals[np.searchsorted(cdf, u, side="right").clip(0, len(vals) - 1)])
        return lo + (hi - lo) * u

    def u01_array(self, size: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            ctrs = np.uint64(int(self.ctr) + 1) + np.arange(size, dtype=np.uint64)
            self.ctr = self.ctr + np.uint64(size)
            vals = self.key + ctrs * np.uint64(0x9E3779B97F4A7C15)
            z = (vals ^ (vals >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
