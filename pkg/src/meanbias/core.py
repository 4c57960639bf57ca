"""Integer-exact load vectors and the normalized-load primitives built on them.

Every overload test in the package reduces to the integer comparison
``x * n >= W``; no floating point is involved in deciding which side of the
mean a bin sits on.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's precondition."""


@dataclass(frozen=True)
class LoadState:
    """Bin loads together with the allocated weight and the round counter.

    ``loads`` is stored as a tuple so states are hashable and can be used as
    keys when enumerating successor distributions.
    """

    loads: tuple[int, ...]
    total_weight: int
    round: int = 0

    def __post_init__(self) -> None:
        loads = tuple(int(x) for x in self.loads)
        object.__setattr__(self, "loads", loads)
        if not loads:
            raise ContractViolation("a load state needs at least one bin")
        if any(x < 0 for x in loads):
            raise ContractViolation("loads must be non-negative")
        if sum(loads) != self.total_weight:
            raise ContractViolation(
                f"loads sum to {sum(loads)} but total_weight is {self.total_weight}"
            )
        if self.round < 0:
            raise ContractViolation("round must be non-negative")

    @property
    def n(self) -> int:
        return len(self.loads)

    @classmethod
    def empty(cls, n: int) -> LoadState:
        if n < 1:
            raise ContractViolation("n must be positive")
        return cls((0,) * n, 0, 0)

    @classmethod
    def from_loads(cls, loads: Iterable[int], round: int = 0) -> LoadState:
        loads = tuple(int(x) for x in loads)
        return cls(loads, sum(loads), round)

    def is_underloaded(self, i: int) -> bool:
        return self.loads[i] * self.n < self.total_weight


@dataclass(frozen=True)
class NormalizedLoad:
    """The value ``numerator / denominator`` equals ``x_i - W/n``."""

    numerator: int
    denominator: int

    @property
    def value(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    @property
    def overloaded(self) -> bool:
        return self.numerator >= 0


def normalized_loads(state: LoadState) -> list[NormalizedLoad]:
    n, w = state.n, state.total_weight
    return [NormalizedLoad(x * n - w, n) for x in state.loads]


def scaled_deviations(state: LoadState) -> list[int]:
    """Return ``x_i * n - W`` for every bin (n times the normalized load)."""
    n, w = state.n, state.total_weight
    return [x * n - w for x in state.loads]


def overloaded_count(state: LoadState) -> int:
    n, w = state.n, state.total_weight
    return sum(1 for x in state.loads if x * n >= w)


def mean_quantile(state: LoadState) -> Fraction:
    """Fraction of bins whose load is at least the mean; always in {1/n, ..., 1}."""
    return Fraction(overloaded_count(state), state.n)


def gap(state: LoadState) -> Fraction:
    return Fraction(max(state.loads) * state.n - state.total_weight, state.n)


def min_gap(state: LoadState) -> Fraction:
    return Fraction(state.total_weight - min(state.loads) * state.n, state.n)


def floor_gap(state: LoadState) -> int:
    """Integer gap used for histograms: the floor of ``max - W/n``."""
    return (max(state.loads) * state.n - state.total_weight) // state.n


def apply_allocation(state: LoadState, bin: int, weight: int) -> LoadState:
    if not 0 <= bin < state.n:
        raise ContractViolation(f"bin {bin} out of range for n={state.n}")
    if weight < 1:
        raise ContractViolation(f"weight must be positive, got {weight}")
    loads = list(state.loads)
    loads[bin] += weight
    return LoadState(tuple(loads), state.total_weight + weight, state.round + 1)


def sorted_desc(loads: Sequence[int]) -> list[int]:
    return sorted(loads, reverse=True)


def exact_fraction(value) -> Fraction:
    """Convert to a Fraction, reading floats by their shortest decimal form (0.1 -> 1/10)."""
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def format_rational(value: Fraction) -> str:
    """Render a rational as an exact decimal string when it terminates.

    Values whose denominator has a prime factor other than 2 or 5 have no
    finite decimal expansion; those are written as ``p/q``.
    """
    value = Fraction(value)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    digits = max(twos, fives)
    if digits == 0:
        return str(value.numerator)
    scaled = value * 10**digits
    sign = "-" if scaled < 0 else ""
    whole = abs(scaled.numerator)
    text = str(whole).rjust(digits + 1, "0")
    return f"{sign}{text[:-digits]}.{text[-digits:]}"
