"""Portable, explicitly-seeded random number generation.

Every stochastic operation in the package draws from an `RngState` so that a
run is fully reproducible from its seed alone.  The generator is SplitMix64
used in counter mode: draw ``i`` of a stream is

    mix64(seed + (counter + i) * 0x9E3779B97F4A7C15)   (mod 2**64)

where ``mix64`` is the SplitMix64 finalizer (Steele, Lea & Flood 2014).
Because each output depends only on (seed, counter) the stream is
vectorizable with uint64 arithmetic and bit-identical on any platform with
IEEE-754 doubles.

Derived quantities:

* uniforms take the top 53 bits: ``(v >> 11) * 2**-53`` in [0, 1)
* normals use the Box-Muller transform on pairs of uniforms
* Laplace variates are the difference of two exponentials
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_NEG53 = 2.0 ** -53


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (in place is fine)."""
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * _MIX1
        x = x ^ (x >> np.uint64(27))
        x = x * _MIX2
        x = x ^ (x >> np.uint64(31))
    return x


class RngState:
    """A reproducible random stream identified by (seed, counter)."""

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def __repr__(self):
        return f"RngState(seed={self.seed}, counter={self.counter})"

    def spawn(self, tag: int) -> "RngState":
        """Independent child stream; used e.g. for per-fold seeds."""
        with np.errstate(over="ignore"):
            base = np.uint64(self.seed) ^ _mix64(
                np.uint64((tag + 1) & 0xFFFFFFFFFFFFFFFF) * _GOLDEN
            )
        return RngState(int(base))

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
            vals = _mix64(np.uint64(self.seed) + idx * _GOLDEN)
        self.counter += n
        return vals

    # ------------------------------------------------------------------
    # distributions
    # ------------------------------------------------------------------
    def uniform(self, shape=()) -> np.ndarray:
        """Doubles in [0, 1)."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        return u.reshape(shape) if shape else float(u[0])

    def _uniform_open0(self, n: int) -> np.ndarray:
        """Doubles in (0, 1]; safe as a log argument."""
        return ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_NEG53

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = self._uniform_open0(m)
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2),
                            r * np.sin(2.0 * np.pi * u2)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def laplace(self, scale: float, shape=()) -> np.ndarray:
        """Laplace(0, scale) as the difference of two exponentials."""
        n = int(np.prod(shape)) if shape else 1
        e1 = -np.log(self._uniform_open0(n))
        e2 = -np.log(self._uniform_open0(n))
        out = scale * (e1 - e2)
        return out.reshape(shape) if shape else float(out[0])

    def integers(self, upper: int, shape=()) -> np.ndarray:
        """Ints in [0, upper) via floor(u * upper); bias < upper * 2**-53."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        v = np.minimum((u * upper).astype(np.int64), upper - 1)
        return v.reshape(shape) if shape else int(v[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of arange(n)."""
        out = np.arange(n)
        if n < 2:
            return out
        u = (self._raw(n - 1) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        for i in range(n - 1, 0, -1):
            j = min(int(u[n - 1 - i] * (i + 1)), i)
            out[i], out[j] = out[j], out[i]
        return out
