"""Portable SplitMix64 generator.

Every random quantity in the package is derived from this generator so that
a given integer seed reproduces the same stream on any platform (and in any
language that implements the same few lines of integer arithmetic).

Stream definition
-----------------
The state is a 64-bit counter initialised to ``seed``.  The k-th output is::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

with all arithmetic modulo 2**64.  Derived draws:

* ``uniform``: ``(z >> 11) * 2**-53`` in [0, 1).
* ``integers(high)``: ``floor(uniform * high)``.
* ``normal``: Box-Muller on two consecutive uniforms ``u1, u2``:
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (the sine branch is discarded).
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based SplitMix64 stream with vectorised draws."""

    def __init__(self, seed=0):
        self.seed = int(seed) & _MASK
        self.count = 0

    def next_uint64(self, size):
        """Return the next ``size`` raw 64-bit outputs."""
        size = int(size)
        steps = np.arange(self.count + 1, self.count + 1 + size, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + steps * GOLDEN
            out = _mix(z)
        self.count += size
        return out

    def uniform(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def integers(self, high, size=None):
        u = self.uniform(1 if size is None else size)
        k = np.floor(np.asarray(u) * high).astype(np.int64)
        if size is None:
            return int(k.reshape(-1)[0])
        return k

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n):
        """Random permutation of ``range(n)``: stable argsort of n uniforms."""
        return np.argsort(self.uniform(n), kind="stable")
