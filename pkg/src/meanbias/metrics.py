"""Potential functions, gap statistics, good-round counting and sample efficiency."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .core import ContractViolation, LoadState, exact_fraction, gap, mean_quantile, min_gap, scaled_deviations

# Linear-space Λ is only reported while it fits in a double.
LINEAR_LIMIT = 700.0


@dataclass(frozen=True)
class PotentialConfig:
    alpha: float = 0.5
    alpha_weak: float | None = None

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ContractViolation("alpha must be positive")
        if self.alpha_weak is not None and self.alpha_weak <= 0:
            raise ContractViolation("alpha_weak must be positive")

    @classmethod
    def default(cls, w_minus: int = 1) -> PotentialConfig:
        return cls(alpha=0.5 / w_minus)

    def weak(self, n: int) -> float:
        return self.alpha_weak if self.alpha_weak is not None else 1.0 / n


def absolute_potential(state: LoadState) -> Fraction:
    return Fraction(sum(abs(d) for d in scaled_deviations(state)), state.n)


def quadratic_potential(state: LoadState) -> Fraction:
    return Fraction(sum(d * d for d in scaled_deviations(state)), state.n * state.n)


def log_sum_exp(values: Sequence[float]) -> float:
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def exponential_potential_log(state: LoadState, alpha: float) -> float:
    """``ln sum_i exp(alpha * |y_i|)`` evaluated without overflow."""
    if alpha <= 0:
        raise ContractViolation("alpha must be positive")
    n = state.n
    return log_sum_exp([alpha * abs(d) / n for d in scaled_deviations(state)])


def linear_exponential_potential(log_value: float) -> float | None:
    return math.exp(log_value) if log_value < LINEAR_LIMIT else None


def sample_efficiency(samples: int, weight: int) -> Fraction:
    """Balls allocated per bin sample, ``W / S``."""
    if samples <= 0:
        raise ContractViolation("sample efficiency needs at least one sample")
    return Fraction(weight, samples)


def quadratic_exponential_ratio_bound(alpha: float) -> float:
    """Constant ``C`` with ``Υ <= C * Λ`` for every state."""
    return ((4 / alpha) * math.log(4 / alpha)) ** 2


def quadratic_change_bound(max_abs_y: Fraction, w_minus: int) -> Fraction:
    """Largest possible one-allocation change of Υ from a state with ``max|y|``."""
    return 4 * w_minus * max_abs_y + 2 * w_minus * w_minus


@dataclass(frozen=True)
class MetricsRow:
    t: int
    gap: Fraction
    min_gap: Fraction
    delta: Fraction
    abs_potential: Fraction
    quad_potential: Fraction
    log_exp_potential: float
    log_weak_potential: float
    samples: int
    weight: int


def snapshot(state: LoadState, config: PotentialConfig, samples: int) -> MetricsRow:
    return MetricsRow(
        t=state.round,
        gap=gap(state),
        min_gap=min_gap(state),
        delta=mean_quantile(state),
        abs_potential=absolute_potential(state),
        quad_potential=quadratic_potential(state),
        log_exp_potential=exponential_potential_log(state, config.alpha),
        log_weak_potential=exponential_potential_log(state, config.weak(state.n)),
        samples=samples,
        weight=state.total_weight,
    )


def check_row(row: MetricsRow, n: int, alpha: float) -> list[str]:
    """Return the snapshot invariants a row violates (empty when all hold)."""
    problems = []
    log_n = math.log(n)
    slack = 1e-9 * max(1.0, abs(row.log_exp_potential))
    if row.abs_potential < 0 or row.quad_potential < 0:
        problems.append("negative potential")
    if row.log_exp_potential < log_n - slack or row.log_weak_potential < log_n - 1e-9:
        problems.append("exponential potential below n")
    ln_bound = math.log(quadratic_exponential_ratio_bound(alpha)) + row.log_exp_potential
    if row.quad_potential > 0 and math.log(row.quad_potential) > ln_bound + slack:
        problems.append("quadratic potential exceeds its exponential bound")
    if float(row.gap) * alpha > row.log_exp_potential + slack:
        problems.append("gap exceeds ln(Lambda)/alpha")
    if float(row.min_gap) * alpha > row.log_exp_potential + slack:
        problems.append("min gap exceeds ln(Lambda)/alpha")
    if row.abs_potential * row.abs_potential > n * row.quad_potential:
        problems.append("Cauchy-Schwarz violated between the absolute and quadratic potentials")
    return problems


@dataclass
class GoodRoundCounter:
    """Counts rounds whose mean quantile lies in ``[epsilon, 1 - epsilon]``."""

    epsilon: Fraction
    good_rounds: int = 0
    counted_rounds: int = 0
    window: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        self.epsilon = exact_fraction(self.epsilon)
        if not 0 < self.epsilon < Fraction(1, 2):
            raise ContractViolation("epsilon must lie in (0, 1/2)")

    def bounds(self, n: int) -> tuple[int, int]:
        """Inclusive range of overloaded-bin counts that make a round good."""
        return math.ceil(self.epsilon * n), math.floor((1 - self.epsilon) * n)

    def is_good(self, delta: Fraction) -> bool:
        return self.epsilon <= delta <= 1 - self.epsilon

    def record(self, t: int, delta: Fraction) -> None:
        self.counted_rounds += 1
        if self.is_good(delta):
            self.good_rounds += 1
        start = t if self.window is None else self.window[0]
        self.window = (start, t)

    @property
    def fraction(self) -> float:
        if self.counted_rounds == 0:
            raise ContractViolation("no rounds counted")
        return self.good_rounds / self.counted_rounds


def good_round_fraction(
    trace: Iterable[MetricsRow], epsilon, window: tuple[int, int]
) -> float:
    """Fraction of trace rows inside ``window`` (inclusive) with a good mean quantile.

    With a row for every round this is ``G / (t1 - t0 + 1)``; with sparse
    snapshots it is the fraction over the sampled rounds.
    """
    t0, t1 = window
    counter = GoodRoundCounter(exact_fraction(epsilon))
    for row in trace:
        if t0 <= row.t <= t1:
            counter.record(row.t, row.delta)
    if counter.counted_rounds == 0:
        raise ContractViolation(f"window {window} contains no rounds of the trace")
    return counter.fraction
