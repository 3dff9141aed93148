"""Counter-based random numbers keyed by (seed, stream, path, step, slot).

Every draw is a pure function of its key, so a path's randomness does not
depend on how many other paths are simulated, on batch order, or on which
worker produced it.  The mixing function is the SplitMix64 finalizer applied
in a chain over the key components.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_SLOT_BITS = np.uint64(20)

# well-separated streams for the different consumers of randomness
STREAM_MARKET = 1
STREAM_FROZEN = 2
STREAM_FEYNMAN_KAC = 3
STREAM_RESTART = 4


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


class CounterRNG:
    """Stateless generator; ``uniform``/``normal`` broadcast over their keys.

    Parameters
    ----------
    seed : int
        Run seed.
    stream : int
        Consumer id; different streams never share draws.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        with np.errstate(over="ignore"):
            self._key = _mix(_mix(np.uint64(self.seed)) ^ np.uint64(self.stream))

    def _bits(self, path, step, slot):
        path = np.asarray(path, dtype=np.uint64)
        step = np.asarray(step, dtype=np.uint64)
        slot = np.asarray(slot, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = _mix(self._key ^ path)
            z = _mix(z ^ ((step << _SLOT_BITS) | slot))
        return z

    def uniform(self, path, step, slot=0):
        """Uniforms strictly inside (0, 1) with 53 random bits."""
        z = self._bits(path, step, slot) >> _S11
        return (z.astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, path, step, slot=0):
        """Standard normals by inversion of ``uniform``."""
        return ndtri(self.uniform(path, step, slot))
