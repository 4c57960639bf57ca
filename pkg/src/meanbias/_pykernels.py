"""Pure-Python simulation kernel, interchangeable with the compiled one.

Draw order and arithmetic mirror ``_kernels.pyx`` exactly, so both produce
identical trajectories from the same bit generator.
"""

from __future__ import annotations

import numpy as np

from .rng import RandomSource

ONE, TWO, BETA, MEAN, RT, ROUND_RT, KRT, QUANTILE, ZETA, QUANTILE_LOAD = range(10)


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


class Simulator:
    """Runs one process on one load vector, maintaining order statistics incrementally.

    Kept per allocation: the overloaded count (bins with ``x >= ceil(W/n)``),
    the max and min load, and for quantile processes the load at the target
    rank.  All come from a histogram keyed by load value.
    """

    def __init__(self, loads, total_weight, round, samples, params, bit_generator, good_lo, good_hi):
        self._loads = [int(x) for x in np.asarray(loads, dtype=np.int64)]
        self.n = len(self._loads)
        self.total_weight = int(total_weight)
        self.round = int(round)
        self.samples = int(samples)
        self.kind = params.kind
        self.coin_threshold = params.coin_threshold
        self.offsets = [int(f) for f in params.offsets]
        self.w_plus = params.w_plus
        self.w_minus = params.w_minus
        self.rank = params.rank
        self._rng = RandomSource(bit_generator=bit_generator)
        self.good_lo, self.good_hi = int(good_lo), int(good_hi)
        self.good_rounds = 0
        self.counted_rounds = 0

        hist: dict[int, int] = {}
        for x in self._loads:
            hist[x] = hist.get(x, 0) + 1
        self._hist = hist
        self.max_load = max(self._loads)
        self.min_load = min(self._loads)
        self._boundary = _ceil_div(self.total_weight, self.n)
        self.overloaded = sum(1 for x in self._loads if x >= self._boundary)
        if self.rank > 0:
            ordered = sorted(self._loads, reverse=True)
            self.quantile_load = ordered[self.rank - 1]
            self._above = sum(1 for x in self._loads if x > self.quantile_load)
        else:
            self.quantile_load = -1
            self._above = 0

    def loads(self) -> np.ndarray:
        return np.array(self._loads, dtype=np.int64)

    def reset_good(self) -> None:
        self.good_rounds = 0
        self.counted_rounds = 0

    def add_samples(self, count: int) -> None:
        self.samples += count

    def _choose(self):
        rng = self._rng
        loads = self._loads
        n = self.n
        w = self.total_weight
        kind = self.kind
        if kind == BETA:
            kind = TWO if rng.coin_raw(self.coin_threshold) else ONE
        elif kind == ZETA:
            kind = MEAN if rng.coin_raw(self.coin_threshold) else ONE
        if kind == ONE:
            return rng.below(n), 1
        if kind == TWO:
            i1 = rng.below(n)
            i2 = rng.below(n)
            return (i1 if loads[i1] < loads[i2] else i2), 2
        if kind == KRT:
            offsets = self.offsets
            i1 = rng.below(n)
            l1 = _level(loads[i1] * n - w, offsets)
            if l1 == len(offsets):
                return i1, 1
            i2 = rng.below(n)
            l2 = _level(loads[i2] * n - w, offsets)
            return (i1 if l1 >= l2 else i2), 2
        i1 = rng.below(n)
        x = loads[i1]
        if kind == MEAN:
            accept = x * n < w
        elif kind == RT:
            accept = x * n - w < self.offsets[0]
        elif kind == ROUND_RT:
            accept = x * n - self.round < self.offsets[0]
        elif kind == QUANTILE:
            q = self.quantile_load
            if x == q:
                accept = rng.below(self._hist[q]) >= self.rank - self._above
            else:
                accept = x < q
        elif kind == QUANTILE_LOAD:
            accept = x < self.quantile_load
        else:  # pragma: no cover
            raise AssertionError(kind)
        if accept:
            return i1, 1
        return rng.below(n), 2

    def allocate(self, i: int, weight: int) -> None:
        loads = self._loads
        hist = self._hist
        x = loads[i]
        y = x + weight
        loads[i] = y
        hist[x] -= 1
        hist[y] = hist.get(y, 0) + 1
        if y > self.max_load:
            self.max_load = y
        if x < self._boundary <= y:
            self.overloaded += 1
        if self.rank > 0 and x <= self.quantile_load < y:
            self._above += 1
        if hist[x] == 0:
            del hist[x]
            if x == self.min_load:
                v = x + 1
                while v not in hist:
                    v += 1
                self.min_load = v
        self.total_weight += weight
        self.round += 1
        target = _ceil_div(self.total_weight, self.n)
        while self._boundary < target:
            self.overloaded -= hist.get(self._boundary, 0)
            self._boundary += 1
        if self.rank > 0:
            while self._above >= self.rank:
                v = self.quantile_load + 1
                while v not in hist:
                    v += 1
                self._above -= hist[v]
                self.quantile_load = v

    def advance(self, rounds: int) -> None:
        n = self.n
        lo, hi = self.good_lo, self.good_hi
        for _ in range(int(rounds)):
            self.counted_rounds += 1
            if lo <= self.overloaded <= hi:
                self.good_rounds += 1
            i, used = self._choose()
            self.samples += used
            weight = self.w_minus if self._loads[i] * n < self.total_weight else self.w_plus
            self.allocate(i, weight)


def _level(dev: int, offsets) -> int:
    level = 0
    for f in offsets:
        if dev < f:
            level += 1
        else:
            break
    return level


def coupled_run(n: int, m: int, f: int, bit_generator) -> dict:
    """Drive three coupled Two-Thinning runs from one stream of sample pairs.

    ``a``: threshold ``t/n + f`` from empty; ``b``: same threshold from all
    loads ``f``; ``c``: threshold ``t/n`` (Mean-Thinning) from empty.  Every
    round checks ``a <= b`` pointwise, ``b == c + f`` exactly and
    ``max a <= max c + f``.
    """
    rng = RandomSource(bit_generator=bit_generator)
    a = [0] * n
    b = [f] * n
    c = [0] * n
    fn = f * n
    for t in range(m):
        j1 = rng.below(n)
        j2 = rng.below(n)
        i = j1 if a[j1] * n - t < fn else j2
        a[i] += 1
        i = j1 if b[j1] * n - t < fn else j2
        b[i] += 1
        i = j1 if c[j1] * n < t else j2
        c[i] += 1
        for k in range(n):
            if a[k] > b[k]:
                return _violation("dominance", t + 1, k, a, b, c)
            if b[k] != c[k] + f:
                return _violation("shift", t + 1, k, a, b, c)
        if max(a) > max(c) + f:
            return _violation("gap", t + 1, -1, a, b, c)
    return {"violation": None, "rounds": m, "max_a": max(a), "max_b": max(b), "max_c": max(c)}


def _violation(kind: str, round: int, bin: int, a, b, c) -> dict:
    at = {} if bin < 0 else {"a": a[bin], "b": b[bin], "c": c[bin]}
    return {
        "violation": {"kind": kind, "round": round, "bin": bin, **at},
        "rounds": round,
        "max_a": max(a),
        "max_b": max(b),
        "max_c": max(c),
    }
