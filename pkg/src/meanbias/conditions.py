"""Exact certification of the framework conditions on ranked allocation vectors.

Vectors are indexed by rank (heaviest bin first) and compared with exact
rationals.  ``delta`` is the mean quantile; ``delta * n`` must be an integer,
and the first ``delta * n`` ranks are the overloaded bins.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import accumulate, combinations_with_replacement
from typing import Sequence

from .core import ContractViolation
from .processes import (
    Kind,
    ProcessSpec,
    WeightRule,
    k_threshold_vector,
    mix,
    parse_spec,
    thinning_vector,
    two_choice_vector,
    uniform_vector,
)


class Condition(enum.Enum):
    P1 = "P1"
    P2 = "P2"
    W1 = "W1"
    W2 = "W2"
    P3 = "P3"
    MAJORIZE_PREFIX = "MajorizePrefix"
    MAJORIZE_SUFFIX = "MajorizeSuffix"


@dataclass(frozen=True)
class Witness:
    """Where a check failed: a 1-based rank or prefix length and the two sides."""

    part: str
    index: int
    actual: Fraction
    bound: Fraction

    def as_dict(self) -> dict:
        return {"part": self.part, "index": self.index, "actual": str(self.actual), "bound": str(self.bound)}


@dataclass(frozen=True)
class ConditionReport:
    condition: Condition
    holds: bool
    witness: Witness | None = None

    def __post_init__(self) -> None:
        if self.holds != (self.witness is None):
            raise ContractViolation("a witness is present exactly when the check fails")

    def __bool__(self) -> bool:
        return self.holds

    def as_dict(self) -> dict:
        out: dict = {"condition": self.condition.value, "holds": self.holds}
        if self.witness is not None:
            out["witness"] = self.witness.as_dict()
        return out


@dataclass(frozen=True)
class ConditionConstants:
    k1: Fraction = Fraction(1)
    k2: Fraction = Fraction(1)
    k3: Fraction = Fraction(1)
    k4: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        for name in ("k1", "k2", "k3", "k4"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        if self.k1 < 1 or self.k1.denominator != 1:
            raise ContractViolation("k1 must be an integer >= 1")
        for name in ("k2", "k3", "k4"):
            if not 0 < getattr(self, name) <= 1:
                raise ContractViolation(f"{name} must lie in (0, 1]")


def first_prefix_shortfall(p: Sequence[Fraction], q: Sequence[Fraction]) -> tuple[int, Fraction, Fraction] | None:
    """First prefix length where ``p`` falls below ``q``, with both prefix sums."""
    if len(p) != len(q):
        raise ContractViolation(f"length mismatch: {len(p)} vs {len(q)}")
    for k, (a, b) in enumerate(zip(accumulate(p), accumulate(q)), start=1):
        if a < b:
            return k, a, b
    return None


def majorizes(p: Sequence[Fraction], q: Sequence[Fraction]) -> bool:
    """True iff every prefix sum of ``p`` is at least that of ``q``."""
    return first_prefix_shortfall([Fraction(x) for x in p], [Fraction(x) for x in q]) is None


def _split(p: Sequence[Fraction], delta: Fraction) -> tuple[int, list[Fraction], list[Fraction]]:
    n = len(p)
    count = Fraction(delta) * n
    if count.denominator != 1:
        raise ContractViolation(f"delta*n = {count} is not an integer")
    over = int(count)
    if not 1 <= over <= n:
        raise ContractViolation(f"delta*n = {over} outside [1, {n}]")
    p = [Fraction(x) for x in p]
    return over, p[:over], p[over:][::-1]


def _check_biased(
    condition: Condition,
    p: Sequence[Fraction],
    delta: Fraction,
    k1: Fraction,
    k2: Fraction,
    over_level: Fraction,
    under_level: Fraction,
) -> ConditionReport:
    n = len(p)
    over, prefix, suffix = _split(p, delta)
    cap = Fraction(k1) / n
    floor = Fraction(k2) / n
    # integer numerators over one common denominator keep the scans cheap
    den = math.lcm(*(x.denominator for x in (*p, cap, floor, over_level, under_level)))

    def scale(x: Fraction) -> int:
        return x.numerator * (den // x.denominator)

    def witness(part: str, index: int, actual: int, bound: int) -> ConditionReport:
        return ConditionReport(condition, False, Witness(part, index, Fraction(actual, den), Fraction(bound, den)))

    cap_s, floor_s = scale(cap), scale(floor)
    over_s, under_s = scale(over_level), scale(under_level)
    head = [scale(x) for x in prefix]
    tail = [scale(x) for x in suffix]
    for i, xs in enumerate(head, start=1):
        if xs > cap_s:
            return witness("overloaded-max", i, xs, cap_s)
    for j, xs in enumerate(tail, start=1):
        if xs < floor_s:
            return witness("underloaded-min", n - j + 1, xs, floor_s)
    # the overloaded prefix must be majorized by the constant comparator
    for i, total in enumerate(accumulate(head), start=1):
        if total > i * over_s:
            return witness("overloaded-prefix", i, total, i * over_s)
    for j, total in enumerate(accumulate(tail), start=1):
        if total < j * under_s:
            return witness("underloaded-suffix", j, total, j * under_s)
    return ConditionReport(condition, True)


def check_P1(p: Sequence[Fraction], delta, k1=1, k2=1) -> ConditionReport:
    n = len(p)
    u = Fraction(1, n)
    return _check_biased(Condition.P1, p, Fraction(delta), Fraction(k1), Fraction(k2), u, u)


def check_P2(p: Sequence[Fraction], delta, k1=1, k2=1, k3=1, k4=1) -> ConditionReport:
    n = len(p)
    delta = Fraction(delta)
    over_level = (1 - Fraction(k3) * (1 - delta)) / n
    under_level = (1 + Fraction(k4) * delta) / n
    return _check_biased(Condition.P2, p, delta, Fraction(k1), Fraction(k2), over_level, under_level)


def check_W1(rule: WeightRule) -> ConditionReport:
    if not 1 <= rule.w_plus:
        return ConditionReport(Condition.W1, False, Witness("w_plus", 0, Fraction(rule.w_plus), Fraction(1)))
    if rule.w_plus > rule.w_minus:
        return ConditionReport(
            Condition.W1, False, Witness("w_plus<=w_minus", 0, Fraction(rule.w_plus), Fraction(rule.w_minus))
        )
    return ConditionReport(Condition.W1, True)


def check_W2(rule: WeightRule, p: Sequence[Fraction], delta) -> ConditionReport:
    w1 = check_W1(rule)
    if not w1:
        return ConditionReport(Condition.W2, False, w1.witness)
    if rule.w_plus >= rule.w_minus:
        return ConditionReport(
            Condition.W2, False, Witness("w_plus<w_minus", 0, Fraction(rule.w_plus), Fraction(rule.w_minus))
        )
    over, _, suffix = _split(p, Fraction(delta))
    if suffix:
        flat = [sum(suffix) / len(suffix)] * len(suffix)
        short = first_prefix_shortfall(suffix, flat)
        if short:
            k, a, b = short
            return ConditionReport(Condition.W2, False, Witness("underloaded-suffix", k, a, b))
    return ConditionReport(Condition.W2, True)


def check_P3(p: Sequence[Fraction], epsilon, k4) -> ConditionReport:
    """Lower bound ``min p >= k4/n``; ``epsilon`` only documents the caller's regime."""
    n = len(p)
    floor = Fraction(k4) / n
    for i, x in enumerate(p, start=1):
        if Fraction(x) < floor:
            return ConditionReport(Condition.P3, False, Witness("min", i, Fraction(x), floor))
    return ConditionReport(Condition.P3, True)


def weighted_prefix_dominance_oracle(a: Sequence, b: Sequence, c: Sequence) -> bool:
    """Check ``sum a_i c_i <= sum b_i c_i`` for prefix-dominated ``a`` and non-increasing ``c``."""
    a = [Fraction(x) for x in a]
    b = [Fraction(x) for x in b]
    c = [Fraction(x) for x in c]
    if not len(a) == len(b) == len(c):
        raise ContractViolation("sequences must have equal length")
    if any(x < 0 for x in a + b + c):
        raise ContractViolation("sequences must be non-negative")
    if any(x < y for x, y in zip(c, c[1:])):
        raise ContractViolation("c must be non-increasing")
    if first_prefix_shortfall(b, a) is not None:
        raise ContractViolation("prefix sums of a must not exceed those of b")
    lhs = sum(x * y for x, y in zip(a, c))
    rhs = sum(x * y for x, y in zip(b, c))
    return lhs <= rhs


def scaled_integers(p: Sequence[Fraction]) -> tuple[list[int], int]:
    """Write a rational vector over a common denominator."""
    den = math.lcm(*(Fraction(x).denominator for x in p))
    return [int(Fraction(x) * den) for x in p], den


# audits over every reachable quantile profile ----------------------------


@dataclass(frozen=True)
class Claim:
    """A condition a process is asserted to satisfy, with its constants.

    For P3 the constant ``k4`` is either fixed or equal to ``epsilon``
    (``k4_is_epsilon``), and the check runs only for ``delta`` in
    ``[epsilon, 1 - epsilon]``.
    """

    process: str
    condition: Condition
    constants: ConditionConstants = ConditionConstants()
    k4_is_epsilon: bool = False


CLAIMS: tuple[Claim, ...] = (
    Claim("mean-thinning", Condition.P2, ConditionConstants(1, 1, 1, 1)),
    Claim("mean-thinning", Condition.W1),
    Claim("one-plus-beta:0.5", Condition.P2, ConditionConstants(2, Fraction(1, 2), Fraction(1, 2), Fraction(1, 2))),
    Claim("one-plus-beta:0.5", Condition.W1),
    Claim("one-plus-zeta:0.5", Condition.P2, ConditionConstants(2, 1, Fraction(1, 2), Fraction(1, 2))),
    Claim("one-plus-zeta:0.5", Condition.W1),
    Claim("k-relative-threshold:log_n,0", Condition.P2, ConditionConstants(2, 1, 1, 1)),
    Claim("k-relative-threshold:log_n,0", Condition.W1),
    Claim("twinning", Condition.P1, ConditionConstants(1, 1)),
    Claim("twinning", Condition.W2),
    Claim("one-choice", Condition.P1, ConditionConstants(1, 1)),
    Claim("mean-thinning", Condition.P3, k4_is_epsilon=True),
    Claim("twinning", Condition.P3, ConditionConstants(k4=1)),
    Claim("one-plus-beta:0.5", Condition.P3, ConditionConstants(k4=Fraction(1, 2))),
)

AUDIT_EPSILONS = (Fraction(1, 10), Fraction(1, 4), Fraction(2, 5))


def profiles(spec: ProcessSpec, n: int, over: int):
    """Yield ``(profile, ranked vector)`` for every reachable state shape.

    ``over`` is the number of overloaded bins.  The vector of every supported
    process depends on the state only through a few counts, listed here as the
    profile.
    """
    kind = spec.kind
    if kind in (Kind.ONE_CHOICE, Kind.TWINNING):
        yield (), uniform_vector(n)
    elif kind is Kind.TWO_CHOICE:
        yield (), two_choice_vector(n)
    elif kind is Kind.ONE_PLUS_BETA:
        yield (), mix(spec.beta, two_choice_vector(n), uniform_vector(n))
    elif kind is Kind.MEAN_THINNING:
        yield (over,), thinning_vector(n, over)
    elif kind is Kind.ONE_PLUS_ZETA:
        yield (over,), mix(spec.zeta, thinning_vector(n, over), uniform_vector(n))
    elif kind is Kind.RELATIVE_THRESHOLD:
        scaled = spec.scaled_offsets(n)[0]
        # a positive offset rejects a subset of the overloaded bins, none when all are equal
        choices = [over] if scaled <= 0 else range(0, (over if over < n else 0) + 1)
        for r in choices:
            yield (r,), thinning_vector(n, r)
    elif kind is Kind.K_RELATIVE_THRESHOLD:
        scaled = spec.scaled_offsets(n)
        positive = [f for f in scaled if f > 0]
        tail = [over] * (len(scaled) - len(positive))
        top = over if over < n else 0
        for counts in combinations_with_replacement(range(top + 1), len(positive)):
            full = (*counts, *tail)
            if all(a <= b for a, b in zip(full, full[1:])):
                yield full, k_threshold_vector(n, full)
    elif kind in (Kind.QUANTILE, Kind.TWO_THINNING):
        for r in range(n + 1):
            yield (r,), thinning_vector(n, r)
    else:  # pragma: no cover
        raise AssertionError(kind)


@dataclass(frozen=True)
class AuditRecord:
    process: str
    n: int
    delta: Fraction
    profile: tuple[int, ...]
    report: ConditionReport
    epsilon: Fraction | None = None

    def as_dict(self) -> dict:
        out = {
            "process": self.process,
            "n": self.n,
            "delta": str(self.delta),
            "profile": list(self.profile),
            **self.report.as_dict(),
        }
        if self.epsilon is not None:
            out["epsilon"] = str(self.epsilon)
        return out


def _valid_at(spec: ProcessSpec, n: int) -> bool:
    try:
        spec.scaled_offsets(n)
    except ContractViolation:
        return False
    return True


def audit(claim: Claim, n_values, epsilons=AUDIT_EPSILONS):
    """Check ``claim`` at every ``n`` in ``n_values`` and every reachable profile."""
    spec = parse_spec(claim.process)
    k = claim.constants
    for n in n_values:
        if not _valid_at(spec, n):
            continue
        if claim.condition is Condition.W1:
            yield AuditRecord(claim.process, n, Fraction(1), (), check_W1(spec.weight_rule))
            continue
        for over in range(1, n + 1):
            delta = Fraction(over, n)
            for profile, p in profiles(spec, n, over):
                if claim.condition is Condition.P1:
                    yield AuditRecord(claim.process, n, delta, profile, check_P1(p, delta, k.k1, k.k2))
                elif claim.condition is Condition.P2:
                    yield AuditRecord(
                        claim.process, n, delta, profile, check_P2(p, delta, k.k1, k.k2, k.k3, k.k4)
                    )
                elif claim.condition is Condition.W2:
                    yield AuditRecord(claim.process, n, delta, profile, check_W2(spec.weight_rule, p, delta))
                elif claim.condition is Condition.P3:
                    for eps in epsilons:
                        if eps <= delta <= 1 - eps:
                            k4 = eps if claim.k4_is_epsilon else k.k4
                            yield AuditRecord(claim.process, n, delta, profile, check_P3(p, eps, k4), eps)
                else:
                    raise ContractViolation(f"cannot audit {claim.condition.value}")


@dataclass
class ClaimSummary:
    claim: Claim
    checked: int = 0
    failures: int = 0
    first_failure: AuditRecord | None = None

    @property
    def holds(self) -> bool:
        return self.failures == 0

    def as_dict(self) -> dict:
        k = self.claim.constants
        if self.claim.condition in (Condition.W1, Condition.W2):
            constants = None
        elif self.claim.condition is Condition.P3:
            constants = "k4=epsilon" if self.claim.k4_is_epsilon else {"k4": str(k.k4)}
        else:
            constants = [str(v) for v in (k.k1, k.k2, k.k3, k.k4)]
        return {
            "process": self.claim.process,
            "condition": self.claim.condition.value,
            "constants": constants,
            "checked": self.checked,
            "failures": self.failures,
            "holds": self.holds,
            "first_failure": self.first_failure.as_dict() if self.first_failure else None,
        }


def audit_claims(claims=CLAIMS, n_values=range(1, 65), epsilons=AUDIT_EPSILONS) -> list[ClaimSummary]:
    """Run :func:`audit` for every claim and keep counts plus the first failure."""
    out = []
    for claim in claims:
        summary = ClaimSummary(claim)
        for record in audit(claim, n_values, epsilons):
            summary.checked += 1
            if not record.report.holds:
                summary.failures += 1
                if summary.first_failure is None:
                    summary.first_failure = record
        out.append(summary)
    return out
