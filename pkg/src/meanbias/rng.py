"""Seeded random source shared by the Python step function and the fallback kernel.

Both this module and the compiled kernel consume raw 64-bit words from a
numpy ``PCG64`` bit generator and turn them into draws the same way:

* a bin index in ``[0, n)`` is the high word of ``u * n`` (multiply-shift,
  no rejection);
* a coin with probability ``p`` succeeds iff ``u >> 11`` is below
  ``coin_threshold(p) = ceil(p * 2**53)``.

Given the same seed, the two paths therefore produce identical trajectories.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

_BUFFER = 4096
_COIN_BITS = 53


def make_bit_generator(seed: int) -> np.random.PCG64:
    return np.random.PCG64(np.random.SeedSequence(int(seed)))


def derive_seed(seed: int, rep: int) -> int:
    """64-bit seed for repetition ``rep``, a fixed function of ``(seed, rep)``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(rep),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def coin_threshold(p: Fraction | float) -> int:
    p = Fraction(p)
    if not 0 <= p <= 1:
        raise ValueError(f"probability {p} outside [0, 1]")
    return math.ceil(p * (1 << _COIN_BITS))


class RandomSource:
    """Buffered view over a PCG64 stream with the package's draw conventions."""

    def __init__(self, seed: int | None = None, bit_generator: np.random.PCG64 | None = None):
        if bit_generator is None:
            if seed is None:
                raise ValueError("need a seed or a bit generator")
            bit_generator = make_bit_generator(seed)
        self._bitgen = bit_generator
        self._buf: list[int] = []
        self._pos = 0
        self._thresholds: dict[Fraction | float, int] = {}

    def next_u64(self) -> int:
        if self._pos == len(self._buf):
            self._buf = self._bitgen.random_raw(_BUFFER).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def below(self, n: int) -> int:
        return (self.next_u64() * n) >> 64

    def coin_raw(self, threshold: int) -> bool:
        return (self.next_u64() >> 11) < threshold

    def coin(self, p: Fraction | float) -> bool:
        threshold = self._thresholds.get(p)
        if threshold is None:
            threshold = self._thresholds[p] = coin_threshold(p)
        return self.coin_raw(threshold)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53
