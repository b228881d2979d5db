"""Portable seeded random numbers.

Noise realizations must be reproducible bit-for-bit across runs and across
reimplementations in other languages, so this module pins a tiny, fully
specified generator instead of delegating to platform RNGs:

* stream: SplitMix64 (64-bit state; increment 0x9E3779B97F4A7C15, finalizer
  constants 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB, shifts 30/27/31),
* floats: top 53 bits mapped to (0, 1) via ``((bits >> 11) + 0.5) * 2**-53``,
* normals: Box-Muller; each pair consumes two consecutive stream outputs
  (u1 then u2) and emits (r*cos, r*sin) in that order.  Odd-length requests
  consume a full final pair and drop its second member.
"""

from __future__ import annotations

import numpy as np

_INCREMENT = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class PortableRng:
    """SplitMix64 stream with Box-Muller normals."""

    def __init__(self, seed: int):
        self._state = np.uint64(int(seed) & _MASK64)

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs of the stream."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = self._state + steps * _INCREMENT
            out = _finalize(states)
            self._state = states[-1] if n > 0 else self._state
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in the open interval (0, 1)."""
        bits = self.raw(n)
        return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53

    def standard_normal(self, n: int) -> np.ndarray:
        """``n`` standard normal variates via Box-Muller."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(u[0::2]))
        angle = (2.0 * np.pi) * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]
