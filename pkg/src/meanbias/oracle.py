"""Exact one-step expectations by enumerating a process's sampling semantics.

``one_step_distribution`` replays :func:`meanbias.processes.step` against a
random source that walks every branch of every draw (bin samples and mixing
coins) like an odometer.  The resulting distribution is exact, so the
quadratic drift bounds are checked in rational arithmetic.

The exponential potential is irrational at rational states, so its bounds are
checked with outward-rounded interval arithmetic (``mpmath.iv``): a bound
holds when the upper end of the left side is at most the lower end of the
right side, and is reported as undecided when the intervals overlap.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterator

import mpmath
from mpmath import iv

from .conditions import ConditionConstants
from .core import (
    ContractViolation,
    LoadState,
    apply_allocation,
    exact_fraction,
    mean_quantile,
    scaled_deviations,
)
from .metrics import absolute_potential, quadratic_potential
from .processes import Kind, ProcessSpec, WeightRule, parse_spec, ranked_probability_vector, step

MAX_ENUMERATION_N = 8
INTERVAL_PRECISION = 120


class _Odometer:
    """Random source that follows a fixed branch path and records each draw's arity."""

    def __init__(self, path: list[int]):
        self.path = path
        self.arity: list[int] = []
        self.probability = Fraction(1)

    def _next(self, arity: int) -> int:
        pos = len(self.arity)
        if pos == len(self.path):
            self.path.append(0)
        self.arity.append(arity)
        return self.path[pos]

    def below(self, n: int) -> int:
        choice = self._next(n)
        self.probability /= n
        return choice

    def coin(self, p) -> bool:
        p = Fraction(p)
        heads = self._next(2) == 0
        self.probability *= p if heads else 1 - p
        return heads


def enumerate_steps(spec: ProcessSpec, state: LoadState) -> Iterator[tuple[object, Fraction]]:
    """Yield every ``(StepOutcome, probability)`` branch of one step."""
    path: list[int] = []
    while True:
        src = _Odometer(path)
        outcome = step(spec, state, src)
        if src.probability:
            yield outcome, src.probability
        path, arity = src.path[: len(src.arity)], src.arity
        i = len(path) - 1
        while i >= 0 and path[i] + 1 >= arity[i]:
            i -= 1
        if i < 0:
            return
        path = path[:i] + [path[i] + 1]


@dataclass(frozen=True)
class OutcomeDistribution:
    state: LoadState
    allocations: dict[tuple[int, int], Fraction]
    expected_samples: Fraction

    @property
    def outcomes(self) -> list[tuple[LoadState, Fraction]]:
        merged: dict[LoadState, Fraction] = {}
        for (b, w), p in self.allocations.items():
            succ = apply_allocation(self.state, b, w)
            merged[succ] = merged.get(succ, Fraction(0)) + p
        return sorted(merged.items(), key=lambda kv: kv[0].loads)

    def bin_marginals(self) -> list[Fraction]:
        out = [Fraction(0)] * self.state.n
        for (b, _), p in self.allocations.items():
            out[b] += p
        return out

    def expectation(self, fn) -> Fraction:
        return sum((p * fn(s) for s, p in self.outcomes), Fraction(0))


def one_step_distribution(spec: ProcessSpec, state: LoadState) -> OutcomeDistribution:
    if state.n > MAX_ENUMERATION_N:
        raise ContractViolation(f"enumeration is limited to n <= {MAX_ENUMERATION_N}")
    allocations: dict[tuple[int, int], Fraction] = {}
    samples = Fraction(0)
    total = Fraction(0)
    for out, p in enumerate_steps(spec, state):
        key = (out.bin, out.weight)
        allocations[key] = allocations.get(key, Fraction(0)) + p
        samples += p * out.samples_used
        total += p
    if total != 1:  # pragma: no cover - guards the enumeration itself
        raise AssertionError(f"branch probabilities sum to {total}")
    return OutcomeDistribution(state, allocations, samples)


def tie_groups(state: LoadState) -> list[list[int]]:
    """Bins grouped by equal load, heaviest group first."""
    groups: dict[int, list[int]] = {}
    for i, x in enumerate(state.loads):
        groups.setdefault(x, []).append(i)
    return [groups[x] for x in sorted(groups, reverse=True)]


def rank_marginal_mismatch(spec: ProcessSpec, state: LoadState) -> dict | None:
    """Compare enumerated per-bin marginals with the analytic ranked vector.

    Within a group of tied loads only the total is determined, so the
    comparison is made group by group.  Returns ``None`` when they agree.
    """
    marg = one_step_distribution(spec, state).bin_marginals()
    ranked = ranked_probability_vector(spec, state)
    if sum(ranked) != 1 or any(p < 0 for p in ranked):
        return {"reason": "ranked vector is not a distribution"}
    rank = 0
    for group in tie_groups(state):
        got = sum(marg[i] for i in group)
        want = sum(ranked[rank : rank + len(group)])
        if got != want:
            return {
                "ranks": [rank + 1, rank + len(group)],
                "enumerated": str(got),
                "analytic": str(want),
            }
        rank += len(group)
    return None


# mean-biased classes and their constants ----------------------------------


@dataclass(frozen=True)
class MeanBiasedClass:
    """Condition class a process belongs to, with the constants used in its drift bounds."""

    name: str  # "P2W1" or "P1W2"
    constants: ConditionConstants
    weights: WeightRule

    @property
    def c1(self) -> Fraction:
        if self.name == "P2W1":
            return self.weights.w_plus * min(self.constants.k3, self.constants.k4)
        return Fraction(self.weights.w_minus - self.weights.w_plus)

    @property
    def c2(self) -> Fraction:
        return Fraction(4 * self.weights.w_minus**2)

    @property
    def c3(self) -> Fraction:
        return Fraction(max(8, 4 * self.weights.w_minus**2))

    def c4(self, eps: Fraction) -> Fraction:
        w = self.weights
        if self.name == "P2W1":
            k = self.constants
            return eps / 16 * min(w.w_plus * k.k3, w.w_minus * k.k4)
        return eps / 16 * (w.w_minus - w.w_plus)

    def alpha_max(self, eps: Fraction) -> Fraction:
        """Largest smoothing parameter allowed by the drop bound's precondition."""
        wp, wm = self.weights.w_plus, self.weights.w_minus
        if self.name == "P2W1":
            k3, k4 = self.constants.k3, self.constants.k4
            return min(
                Fraction(1, 4 * wm),
                k4 * eps / (2 * wm * (1 + k4 * eps)),
                k3 * eps / (2 * wp * (1 - k3 * eps)),
            )
        return min(Fraction(1, 4 * wm), eps * (wm - wp) / (4 * wm * wm), eps / (2 * wm * (2 + eps)))

    def alpha_default(self, eps: Fraction) -> Fraction:
        """The smoothing parameter the analysis fixes for a given ``eps``."""
        return min(self.c4(eps) * eps**2 / (2 * self.c3 * (1 - eps**2)), self.alpha_max(eps))


def mean_biased_class(spec: ProcessSpec) -> MeanBiasedClass | None:
    """The class under which ``spec`` is registered, or ``None`` if it is not mean-biased."""
    rule = spec.weight_rule
    if rule.w_plus > rule.w_minus:
        return None
    kind = spec.kind
    if rule.w_plus < rule.w_minus and kind in (Kind.ONE_CHOICE, Kind.TWINNING):
        return MeanBiasedClass("P1W2", ConditionConstants(1, 1), rule)
    if kind is Kind.MEAN_THINNING:
        return MeanBiasedClass("P2W1", ConditionConstants(1, 1, 1, 1), rule)
    if kind is Kind.ONE_PLUS_BETA and spec.beta < 1:
        b = spec.beta
        return MeanBiasedClass("P2W1", ConditionConstants(2, 1 - b, b, b), rule)
    if kind is Kind.ONE_PLUS_ZETA:
        z = spec.zeta
        return MeanBiasedClass("P2W1", ConditionConstants(2, 1, z, z), rule)
    if kind is Kind.K_RELATIVE_THRESHOLD and spec.offsets[-1].log_coef == 0 and spec.offsets[-1].constant == 0:
        return MeanBiasedClass("P2W1", ConditionConstants(2, 1, 1, 1), rule)
    return None


# drift checks --------------------------------------------------------------


@dataclass
class DriftReport:
    process: str
    loads: tuple[int, ...]
    expected_quadratic: Fraction
    general_bound: Fraction
    general_holds: bool
    drift_bound: Fraction | None = None
    drift_holds: bool | None = None

    @property
    def holds(self) -> bool:
        return self.general_holds and self.drift_holds is not False

    def as_dict(self) -> dict:
        out = {
            "check": "quadratic-drift",
            "process": self.process,
            "loads": list(self.loads),
            "expected": str(self.expected_quadratic),
            "general_bound": str(self.general_bound),
            "general_holds": self.general_holds,
            "holds": self.holds,
        }
        if self.drift_bound is not None:
            out.update(drift_bound=str(self.drift_bound), drift_holds=self.drift_holds)
        return out


def check_quadratic_drift(spec: ProcessSpec, state: LoadState) -> DriftReport:
    dist = one_step_distribution(spec, state)
    n = state.n
    rule = spec.weight_rule
    expected = dist.expectation(quadratic_potential)
    upsilon = quadratic_potential(state)
    marg = dist.bin_marginals()
    cross = Fraction(0)
    for i, d in enumerate(scaled_deviations(state)):
        w = rule.w_minus if d < 0 else rule.w_plus
        cross += 2 * Fraction(d, n) * marg[i] * w
    general = upsilon + cross + 4 * rule.w_minus**2
    report = DriftReport(spec.text, state.loads, expected, general, expected <= general)
    cls = mean_biased_class(spec)
    if cls is not None:
        bound = upsilon - cls.c1 * absolute_potential(state) / n + cls.c2
        report.drift_bound = bound
        report.drift_holds = expected <= bound
    return report


def _iv(q: Fraction):
    return iv.mpf(q.numerator) / q.denominator


@contextmanager
def _interval_precision(bits: int):
    saved = iv.prec
    iv.prec = bits
    try:
        yield
    finally:
        iv.prec = saved


class _ExpCache:
    """Interval enclosures of ``exp(x)`` for rational ``x``, memoised."""

    def __init__(self):
        self._cache: dict[Fraction, object] = {}

    def __call__(self, x: Fraction):
        val = self._cache.get(x)
        if val is None:
            val = self._cache[x] = iv.exp(_iv(x))
        return val


def _lambda_interval(state: LoadState, alpha: Fraction, exp: _ExpCache):
    n = state.n
    return sum((exp(alpha * Fraction(abs(d), n)) for d in scaled_deviations(state)), iv.mpf(0))


@dataclass
class BoundCheck:
    """Outcome of an interval comparison ``lhs <= rhs``: True, False or None (undecided)."""

    lhs: object
    rhs: object
    holds: bool | None

    @classmethod
    def compare(cls, lhs, rhs) -> BoundCheck:
        if lhs.b <= rhs.a:
            return cls(lhs, rhs, True)
        if lhs.a > rhs.b:
            return cls(lhs, rhs, False)
        return cls(lhs, rhs, None)

    def as_dict(self) -> dict:
        return {"lhs": mpmath.nstr(self.lhs.mid, 17), "rhs": mpmath.nstr(self.rhs.mid, 17), "holds": self.holds}


@dataclass
class ExponentialReport:
    process: str
    loads: tuple[int, ...]
    alpha: Fraction
    epsilon: Fraction
    increase: BoundCheck
    drop: BoundCheck | None = None

    @property
    def holds(self) -> bool:
        return self.increase.holds is True and (self.drop is None or self.drop.holds is True)

    def as_dict(self) -> dict:
        out = {
            "check": "exponential-bounds",
            "process": self.process,
            "loads": list(self.loads),
            "alpha": str(self.alpha),
            "epsilon": str(self.epsilon),
            "increase": self.increase.as_dict(),
            "holds": self.holds,
        }
        if self.drop is not None:
            out["drop"] = self.drop.as_dict()
        return out


def check_exponential_bounds(
    spec: ProcessSpec,
    state: LoadState,
    alpha: Fraction,
    epsilon: Fraction,
    dist: OutcomeDistribution | None = None,
    exp: _ExpCache | None = None,
) -> ExponentialReport:
    """Check the universal increase bound, and the drop bound in good quantiles."""
    alpha, epsilon = exact_fraction(alpha), exact_fraction(epsilon)
    dist = dist or one_step_distribution(spec, state)
    exp = exp or _ExpCache()
    n = state.n
    cls = mean_biased_class(spec)
    c3 = cls.c3 if cls else Fraction(max(8, 4 * spec.weight_rule.w_minus**2))
    with _interval_precision(INTERVAL_PRECISION):
        lam = _lambda_interval(state, alpha, exp)
        expected = iv.mpf(0)
        for succ, p in dist.outcomes:
            expected += _iv(p) * _lambda_interval(succ, alpha, exp)
        increase = BoundCheck.compare(expected, lam * (1 + _iv(c3 * alpha**2 / (2 * n))) + _iv(c3))
        drop = None
        delta = mean_quantile(state)
        if cls is not None and epsilon <= delta <= 1 - epsilon:
            factor = 1 - _iv(2 * cls.c4(epsilon) * alpha / n)
            drop = BoundCheck.compare(expected, lam * factor + 8)
    return ExponentialReport(spec.text, state.loads, alpha, epsilon, increase, drop)


def probe_alphas(spec: ProcessSpec, epsilon: Fraction) -> list[Fraction]:
    """Smoothing parameters exercised for a process: the precondition maximum and the default."""
    cls = mean_biased_class(spec)
    if cls is None:
        return [Fraction(1, 4 * spec.weight_rule.w_minus)]
    return sorted({cls.alpha_max(epsilon), cls.alpha_default(epsilon)}, reverse=True)


# the counterexample configuration ------------------------------------------


def claim_b1_state(n: int) -> LoadState:
    """Integer loads realising normalized loads ``(n^2, n, ..., n, -h, -h)``, ``h = n(2n-3)/2``.

    ``h`` is an integer only for even ``n``; the offset ``h`` makes the two
    light bins empty, which is the smallest valid shift.
    """
    if n < 4 or n % 2:
        raise ContractViolation("the counterexample vector needs an even n >= 4")
    h = n * (2 * n - 3) // 2
    loads = (n * n + h,) + (n + h,) * (n - 3) + (0, 0)
    state = LoadState.from_loads(loads)
    assert state.total_weight == n * h
    return state


@dataclass
class B1Report:
    n: int
    alpha: Fraction
    delta: Fraction
    delta_persists: bool
    log_ratio: float
    log_bound: float
    holds: bool | None  # None: below the numeric threshold, inconclusive

    @property
    def status(self) -> str:
        return "holds" if self.holds else "inconclusive"

    def as_dict(self) -> dict:
        return {
            "check": "counterexample",
            "n": self.n,
            "alpha": str(self.alpha),
            "delta": str(self.delta),
            "delta_persists": self.delta_persists,
            "ratio_minus_one": math.expm1(self.log_ratio),
            "bound_minus_one": math.expm1(self.log_bound),
            "status": self.status,
        }


def bin_marginals_by_load(spec: ProcessSpec, state: LoadState) -> dict[int, Fraction]:
    """Exact allocation probability of a single bin, keyed by its load.

    Tied bins share their group's ranked mass equally, which is the per-bin
    marginal under any bin-symmetric tie-breaking.
    """
    ranked = ranked_probability_vector(spec, state)
    out: dict[int, Fraction] = {}
    rank = 0
    for group in tie_groups(state):
        size = len(group)
        out[state.loads[group[0]]] = sum(ranked[rank : rank + size], Fraction(0)) / size
        rank += size
    return out


def potential_ratio(spec: ProcessSpec, state: LoadState, alpha, dps: int = 40) -> mpmath.mpf:
    """``E[Λ(t+1)] / Λ(t)`` for one allocation, in closed form and at any ``n``.

    When bin ``j`` receives weight ``w`` every normalized load drops by
    ``w/n`` and ``y_j`` also rises by ``w``.  Summing over bins and over the
    (at most two) weight values avoids enumerating outcomes.  Exponents are
    shifted by the largest one before exponentiating.
    """
    alpha = exact_fraction(alpha)
    if alpha <= 0:
        raise ContractViolation("alpha must be positive")
    n, total = state.n, state.total_weight
    marg = bin_marginals_by_load(spec, state)
    counts: dict[int, int] = {}
    for x in state.loads:
        counts[x] = counts.get(x, 0) + 1
    rule = spec.weight_rule
    with mpmath.workdps(dps):
        a = mpmath.mpf(alpha.numerator) / alpha.denominator

        def ex(y: Fraction, shift) -> mpmath.mpf:
            return mpmath.exp(a * mpmath.mpf(abs(y).numerator) / abs(y).denominator - shift)

        ys = {x: Fraction(x * n - total, n) for x in counts}
        shift = a * max(abs(y) for y in ys.values()) + a * max(rule.w_plus, rule.w_minus)
        lam = mpmath.fsum(c * ex(ys[x], shift) for x, c in counts.items())
        by_weight: dict[int, Fraction] = {}
        own = mpmath.mpf(0)
        for x, c in counts.items():
            w = rule.weight(x * n < total)
            p = marg[x]
            by_weight[w] = by_weight.get(w, Fraction(0)) + c * p
            pf = mpmath.mpf(p.numerator) / p.denominator
            own += c * pf * (ex(ys[x] + w - Fraction(w, n), shift) - ex(ys[x] - Fraction(w, n), shift))
        rest = mpmath.fsum(
            mpmath.mpf(pw.numerator) / pw.denominator
            * mpmath.fsum(c * ex(ys[x] - Fraction(w, n), shift) for x, c in counts.items())
            for w, pw in by_weight.items()
        )
        return (own + rest) / lam


def counterexample_ratio(n: int, alpha: Fraction, dps: int = 40) -> mpmath.mpf:
    """Exact ``E[Λ'] / Λ`` for Mean-Thinning at the counterexample vector."""
    return potential_ratio(ProcessSpec.mean_thinning(), claim_b1_state(n), alpha, dps)


def check_counterexample_B1(n: int, alpha) -> B1Report:
    alpha = exact_fraction(alpha)
    state = claim_b1_state(n)
    delta = mean_quantile(state)
    ratio = counterexample_ratio(n, alpha)
    log_ratio = float(mpmath.log(ratio))
    log_bound = math.log1p(0.2 * float(alpha) ** 2 / n)
    holds = True if log_ratio >= log_bound else None
    return B1Report(n, alpha, delta, delta >= 1 - Fraction(2, n), log_ratio, log_bound, holds)


def counterexample_threshold(alpha, n_max: int = 400) -> tuple[int | None, list[B1Report]]:
    """Smallest even ``n`` from which the growth bound holds for every even ``n <= n_max``."""
    reports = [check_counterexample_B1(n, alpha) for n in range(4, n_max + 1, 2)]
    threshold = None
    for rep in reversed(reports):
        if rep.holds:
            threshold = rep.n
        else:
            break
    return threshold, reports


# exhaustive suite ----------------------------------------------------------

DRIFT_PROCESSES = (
    "mean-thinning",
    "twinning",
    "one-plus-beta:0.5",
    "one-plus-zeta:0.5",
    "one-choice",
    "two-choice",
)

CONSISTENCY_PROCESSES = (
    "one-choice",
    "two-choice",
    "one-plus-beta:0.5",
    "one-plus-beta:1",
    "mean-thinning",
    "relative-threshold:0",
    "relative-threshold:const:1",
    "relative-threshold:log_n",
    "two-thinning:const:1",
    "k-relative-threshold:log_n,0",
    "k-relative-threshold:2log_n,log_n,0",
    "k-relative-threshold:const:2,const:1",
    "quantile:0.5",
    "quantile:0.3",
    "quantile:0.5:load",
    "one-plus-zeta:0.5",
    "twinning",
    "one-choice@1,3",
)

SUITE_EPSILON = Fraction(1, 4)


def small_states(n_values, max_load: int) -> Iterator[LoadState]:
    for n in n_values:
        for loads in product(range(max_load + 1), repeat=n):
            yield LoadState.from_loads(loads)


@dataclass
class SuiteSummary:
    name: str
    checked: int = 0
    failures: list[dict] = field(default_factory=list)
    undecided: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and not self.undecided

    def as_dict(self) -> dict:
        return {
            "check": self.name,
            "checked": self.checked,
            "failures": len(self.failures),
            "undecided": len(self.undecided),
            "passed": self.passed,
            "first_failure": self.failures[0] if self.failures else None,
        }


def drift_suite(processes=DRIFT_PROCESSES, n_values=(2, 3, 4), max_load: int = 4, epsilon=SUITE_EPSILON):
    """Quadratic and exponential one-step bounds over every small state."""
    quad = SuiteSummary("quadratic-drift")
    expo = SuiteSummary("exponential-increase")
    drop = SuiteSummary("exponential-drop")
    for text in processes:
        spec = parse_spec(text)
        alphas = probe_alphas(spec, Fraction(epsilon))
        caches = {a: _ExpCache() for a in alphas}
        for state in small_states(n_values, max_load):
            dist = one_step_distribution(spec, state)
            q = check_quadratic_drift(spec, state)
            quad.checked += 1
            if not q.holds:
                quad.failures.append(q.as_dict())
            for a in alphas:
                r = check_exponential_bounds(spec, state, a, epsilon, dist, caches[a])
                expo.checked += 1
                if r.increase.holds is False:
                    expo.failures.append(r.as_dict())
                elif r.increase.holds is None:
                    expo.undecided.append(r.as_dict())
                if r.drop is not None:
                    drop.checked += 1
                    if r.drop.holds is not True:
                        drop.failures.append(r.as_dict())
    return quad, expo, drop


def consistency_suite(processes=CONSISTENCY_PROCESSES, n_values=(1, 2, 3, 4, 5), max_load: int = 4):
    summary = SuiteSummary("rank-marginals")
    for text in processes:
        spec = parse_spec(text)
        for state in small_states(n_values, max_load):
            try:
                spec.scaled_offsets(state.n)
            except ContractViolation:
                continue
            summary.checked += 1
            bad = rank_marginal_mismatch(spec, state)
            if bad is not None:
                summary.failures.append({"process": text, "loads": list(state.loads), **bad})
    return summary
