from __future__ import annotations

from fractions import Fraction

from hypothesis import strategies as st

from meanbias.core import LoadState


def load_states(max_n: int = 8, max_load: int = 12):
    return st.lists(st.integers(0, max_load), min_size=1, max_size=max_n).map(LoadState.from_loads)


def probability_vectors(n: int, denominator: int = 12):
    """Random rational probability vectors of length ``n`` (entries sum to 1)."""
    return st.lists(st.integers(0, denominator), min_size=n, max_size=n).filter(any).map(
        lambda xs: [Fraction(x, sum(xs)) for x in xs]
    )


class ScriptedSampler:
    """Feeds predetermined draws to ``processes.step``: bin indices for ``below`` and booleans for ``coin``."""

    def __init__(self, bins=(), coins=()):
        self.bins = list(bins)
        self.coins = list(coins)

    def below(self, n: int) -> int:
        i = self.bins.pop(0)
        assert 0 <= i < n
        return i

    def coin(self, p) -> bool:
        return self.coins.pop(0)
