"""Allocation processes: one step of each, plus its ranked allocation vector.

A process is described by an immutable :class:`ProcessSpec`.  ``step`` draws
from any object exposing ``below(n)`` and ``coin(p)``, so the same code path
runs under a seeded :class:`~meanbias.rng.RandomSource` and under the oracle's
enumerating source.

Threshold offsets ``f(n)`` enter every test through the integer
``ceil(f(n) * n)``: for integer ``k = x*n - W`` and real ``r = f(n)*n`` the
strict test ``k < r`` is equivalent to ``k < ceil(r)``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Protocol, Sequence

import numpy as np

from .core import ContractViolation, LoadState, exact_fraction


class SpecError(ValueError):
    """A process or offset string could not be parsed."""

    def __init__(self, message: str, token: str):
        super().__init__(message)
        self.token = token


class Kind(enum.Enum):
    ONE_CHOICE = "one-choice"
    TWO_CHOICE = "two-choice"
    ONE_PLUS_BETA = "one-plus-beta"
    TWO_THINNING = "two-thinning"
    MEAN_THINNING = "mean-thinning"
    RELATIVE_THRESHOLD = "relative-threshold"
    K_RELATIVE_THRESHOLD = "k-relative-threshold"
    QUANTILE = "quantile"
    ONE_PLUS_ZETA = "one-plus-zeta"
    TWINNING = "twinning"


THINNING_KINDS = frozenset(
    {Kind.MEAN_THINNING, Kind.RELATIVE_THRESHOLD, Kind.TWO_THINNING, Kind.QUANTILE}
)


@dataclass(frozen=True)
class Offset:
    """Threshold offset ``f(n) = log_coef * ln(n) + constant``."""

    log_coef: Fraction = Fraction(0)
    constant: int = 0

    def value(self, n: int) -> float:
        return float(self.log_coef) * math.log(n) + self.constant

    def scaled_ceiling(self, n: int) -> int:
        """``ceil(f(n) * n)``, the integer used in threshold comparisons."""
        if self.log_coef == 0 or n == 1:
            return self.constant * n
        return math.ceil(float(self.log_coef) * math.log(n) * n) + self.constant * n

    @property
    def text(self) -> str:
        if self.log_coef and self.constant:
            raise ContractViolation("offsets mixing log_n and a constant have no textual form")
        if self.log_coef:
            return "log_n" if self.log_coef == 1 else f"{_num_text(self.log_coef)}*log_n"
        return f"const:{self.constant}" if self.constant else "0"

    @classmethod
    def parse(cls, token: str) -> Offset:
        tok = token.strip()
        if tok == "0":
            return cls()
        m = re.fullmatch(r"const:(\d+)", tok)
        if m:
            return cls(constant=int(m.group(1)))
        m = re.fullmatch(r"(?:(\d+(?:\.\d+)?|\d+/\d+)\*?)?log_n", tok)
        if m:
            coef = Fraction(m.group(1)) if m.group(1) else Fraction(1)
            if coef <= 0:
                raise SpecError(f"offset coefficient must be positive in {tok!r}", tok)
            return cls(log_coef=coef)
        raise SpecError(f"unrecognised offset token {tok!r}", tok)


def _num_text(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    as_float = float(q)
    if Fraction(repr(as_float)) == q:
        return repr(as_float)
    return f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class WeightRule:
    w_plus: int = 1
    w_minus: int = 1

    def __post_init__(self) -> None:
        if self.w_plus < 1 or self.w_minus < 1:
            raise ContractViolation("weights must be positive integers")

    def weight(self, underloaded: bool) -> int:
        return self.w_minus if underloaded else self.w_plus


TWINNING_WEIGHTS = WeightRule(1, 2)


@dataclass(frozen=True)
class ProcessSpec:
    kind: Kind
    weight_rule: WeightRule = field(default_factory=WeightRule)
    beta: Fraction | None = None
    zeta: Fraction | None = None
    quantile: Fraction | None = None
    offsets: tuple[Offset, ...] = ()
    # Quantile only: reject every bin whose load reaches the rank-k load,
    # instead of rejecting exactly the k heaviest ranks with ties split.
    by_load: bool = False

    def __post_init__(self) -> None:
        k = self.kind
        for name in ("beta", "zeta", "quantile"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, exact_fraction(val))
        if k is Kind.ONE_PLUS_BETA and not (self.beta is not None and 0 < self.beta <= 1):
            raise ContractViolation("beta must lie in (0, 1]")
        if k is Kind.ONE_PLUS_ZETA and not (self.zeta is not None and 0 < self.zeta <= 1):
            raise ContractViolation("zeta must lie in (0, 1]")
        if k is Kind.QUANTILE and not (self.quantile is not None and 0 < self.quantile < 1):
            raise ContractViolation("quantile must lie in (0, 1)")
        if self.by_load and k is not Kind.QUANTILE:
            raise ContractViolation("the load tie rule applies to quantile processes only")
        if k in (Kind.RELATIVE_THRESHOLD, Kind.TWO_THINNING) and len(self.offsets) != 1:
            raise ContractViolation(f"{k.value} takes exactly one offset")
        if k is Kind.K_RELATIVE_THRESHOLD and not self.offsets:
            raise ContractViolation("k-relative-threshold needs at least one offset")

    # constructors
    @classmethod
    def one_choice(cls) -> ProcessSpec:
        return cls(Kind.ONE_CHOICE)

    @classmethod
    def two_choice(cls) -> ProcessSpec:
        return cls(Kind.TWO_CHOICE)

    @classmethod
    def one_plus_beta(cls, beta) -> ProcessSpec:
        return cls(Kind.ONE_PLUS_BETA, beta=exact_fraction(beta))

    @classmethod
    def mean_thinning(cls) -> ProcessSpec:
        return cls(Kind.MEAN_THINNING)

    @classmethod
    def relative_threshold(cls, offset: Offset) -> ProcessSpec:
        return cls(Kind.RELATIVE_THRESHOLD, offsets=(offset,))

    @classmethod
    def two_thinning(cls, offset: Offset) -> ProcessSpec:
        """Threshold ``t/n + f(n)`` measured against the round counter."""
        return cls(Kind.TWO_THINNING, offsets=(offset,))

    @classmethod
    def k_relative_threshold(cls, offsets: Sequence[Offset]) -> ProcessSpec:
        return cls(Kind.K_RELATIVE_THRESHOLD, offsets=tuple(offsets))

    @classmethod
    def quantile_process(cls, q, by_load: bool = False) -> ProcessSpec:
        """Reject the ``ceil(q*n)`` heaviest bins as first sample.

        Bins tied with the boundary load are rejected with the probability
        that makes exactly that many ranks rejected.  With ``by_load`` every
        tied bin is rejected instead.
        """
        return cls(Kind.QUANTILE, quantile=exact_fraction(q), by_load=by_load)

    @classmethod
    def one_plus_zeta(cls, zeta) -> ProcessSpec:
        return cls(Kind.ONE_PLUS_ZETA, zeta=exact_fraction(zeta))

    @classmethod
    def twinning(cls) -> ProcessSpec:
        return cls(Kind.TWINNING, weight_rule=TWINNING_WEIGHTS)

    @property
    def default_weights(self) -> WeightRule:
        return TWINNING_WEIGHTS if self.kind is Kind.TWINNING else WeightRule()

    @property
    def text(self) -> str:
        k = self.kind
        if k is Kind.ONE_PLUS_BETA:
            body = f"{k.value}:{_num_text(self.beta)}"
        elif k is Kind.ONE_PLUS_ZETA:
            body = f"{k.value}:{_num_text(self.zeta)}"
        elif k is Kind.QUANTILE:
            body = f"{k.value}:{_num_text(self.quantile)}"
            if self.by_load:
                body += ":load"
        elif self.offsets:
            body = f"{k.value}:" + ",".join(o.text for o in self.offsets)
        else:
            body = k.value
        if self.weight_rule != self.default_weights:
            body += f"@{self.weight_rule.w_plus},{self.weight_rule.w_minus}"
        return body

    def __str__(self) -> str:
        return self.text

    def scaled_offsets(self, n: int) -> list[int]:
        """Integer thresholds ``ceil(f_j(n) * n)``; validated strictly decreasing."""
        scaled = [o.scaled_ceiling(n) for o in self.offsets]
        if self.kind is Kind.K_RELATIVE_THRESHOLD:
            values = [o.value(n) for o in self.offsets]
            if any(a <= b for a, b in zip(values, values[1:])):
                raise ContractViolation(
                    f"thresholds of {self.text} are not strictly decreasing at n={n}"
                )
        return scaled

    def quantile_rank(self, n: int) -> int:
        return math.ceil(self.quantile * n)


def _parse_fraction(token: str, whole: str) -> Fraction:
    try:
        return Fraction(token)
    except (ValueError, ZeroDivisionError):
        raise SpecError(f"bad number {token!r} in {whole!r}", token) from None


def parse_spec(text: str) -> ProcessSpec:
    """Parse the textual process form, e.g. ``one-plus-beta:0.5`` or ``twinning``.

    An optional ``@w_plus,w_minus`` suffix overrides the weight rule.
    """
    whole = text.strip()
    body, _, weights = whole.partition("@")
    name, _, arg = body.partition(":")
    try:
        kind = Kind(name)
    except ValueError:
        raise SpecError(f"unknown process {name!r}", name) from None
    try:
        if kind in (Kind.ONE_PLUS_BETA, Kind.ONE_PLUS_ZETA, Kind.QUANTILE):
            if not arg:
                raise SpecError(f"{name} needs a parameter", body)
            arg, _, rule = arg.partition(":")
            if rule and not (kind is Kind.QUANTILE and rule == "load"):
                raise SpecError(f"unknown option {rule!r} for {name}", rule)
            value = _parse_fraction(arg, whole)
            spec = {
                Kind.ONE_PLUS_BETA: lambda: ProcessSpec.one_plus_beta(value),
                Kind.ONE_PLUS_ZETA: lambda: ProcessSpec.one_plus_zeta(value),
                Kind.QUANTILE: lambda: ProcessSpec.quantile_process(value, by_load=bool(rule)),
            }[kind]()
        elif kind in (Kind.RELATIVE_THRESHOLD, Kind.TWO_THINNING, Kind.K_RELATIVE_THRESHOLD):
            if not arg:
                raise SpecError(f"{name} needs threshold offsets", body)
            offsets = tuple(Offset.parse(tok) for tok in arg.split(","))
            if kind is not Kind.K_RELATIVE_THRESHOLD and len(offsets) != 1:
                raise SpecError(f"{name} takes one offset", arg)
            spec = ProcessSpec(kind, offsets=offsets)
        else:
            if arg:
                raise SpecError(f"{name} takes no parameter", arg)
            spec = ProcessSpec(kind, weight_rule=TWINNING_WEIGHTS if kind is Kind.TWINNING else WeightRule())
    except ContractViolation as exc:
        raise SpecError(str(exc), arg or name) from None
    if weights:
        m = re.fullmatch(r"(\d+),(\d+)", weights)
        if not m:
            raise SpecError(f"bad weight rule {weights!r}", weights)
        try:
            rule = WeightRule(int(m.group(1)), int(m.group(2)))
        except ContractViolation as exc:
            raise SpecError(str(exc), weights) from None
        spec = dataclasses.replace(spec, weight_rule=rule)
    return spec


@dataclass(frozen=True)
class StepOutcome:
    bin: int
    weight: int
    samples_used: int


class BinSampler(Protocol):
    def below(self, n: int) -> int: ...

    def coin(self, p: Fraction) -> bool: ...


def _two_choice(loads: Sequence[int], n: int, rng: BinSampler) -> int:
    i1 = rng.below(n)
    i2 = rng.below(n)
    return i1 if loads[i1] < loads[i2] else i2


def _thinning(accept, n: int, rng: BinSampler) -> tuple[int, int]:
    i1 = rng.below(n)
    if accept(i1):
        return i1, 1
    return rng.below(n), 2


def _level(dev: int, scaled: Sequence[int]) -> int:
    """Number of thresholds the scaled deviation ``x*n - W`` stays strictly below."""
    level = 0
    for f in scaled:
        if dev < f:
            level += 1
        else:
            break
    return level


def quantile_load(loads: Sequence[int], rank: int) -> int:
    """Load of the bin at ``rank`` (1-based) in non-increasing order."""
    return sorted(loads, reverse=True)[rank - 1]


def _quantile_acceptor(spec: ProcessSpec, loads: Sequence[int], rng: BinSampler):
    rank = spec.quantile_rank(len(loads))
    q = quantile_load(loads, rank)
    if spec.by_load:
        return lambda j: loads[j] < q
    above = sum(1 for x in loads if x > q)
    tied = sum(1 for x in loads if x == q)

    def accept(j: int) -> bool:
        if loads[j] != q:
            return loads[j] < q
        # tie-break draw: not a bin sample, so it does not count as one
        return rng.below(tied) >= rank - above

    return accept


def step(spec: ProcessSpec, state: LoadState, rng: BinSampler) -> StepOutcome:
    loads = state.loads
    n = state.n
    w = state.total_weight
    kind = spec.kind
    if kind is Kind.ONE_PLUS_BETA:
        kind = Kind.TWO_CHOICE if rng.coin(spec.beta) else Kind.ONE_CHOICE
    elif kind is Kind.ONE_PLUS_ZETA:
        kind = Kind.MEAN_THINNING if rng.coin(spec.zeta) else Kind.ONE_CHOICE

    if kind in (Kind.ONE_CHOICE, Kind.TWINNING):
        i, used = rng.below(n), 1
    elif kind is Kind.TWO_CHOICE:
        i, used = _two_choice(loads, n, rng), 2
    elif kind is Kind.MEAN_THINNING:
        i, used = _thinning(lambda j: loads[j] * n < w, n, rng)
    elif kind is Kind.RELATIVE_THRESHOLD:
        f = spec.scaled_offsets(n)[0]
        i, used = _thinning(lambda j: loads[j] * n - w < f, n, rng)
    elif kind is Kind.TWO_THINNING:
        f = spec.scaled_offsets(n)[0]
        t = state.round
        i, used = _thinning(lambda j: loads[j] * n - t < f, n, rng)
    elif kind is Kind.QUANTILE:
        i, used = _thinning(_quantile_acceptor(spec, loads, rng), n, rng)
    elif kind is Kind.K_RELATIVE_THRESHOLD:
        scaled = spec.scaled_offsets(n)
        i1 = rng.below(n)
        l1 = _level(loads[i1] * n - w, scaled)
        if l1 == len(scaled):
            i, used = i1, 1
        else:
            i2 = rng.below(n)
            l2 = _level(loads[i2] * n - w, scaled)
            i, used = (i1 if l1 >= l2 else i2), 2
    else:  # pragma: no cover - enum is exhaustive
        raise AssertionError(kind)
    return StepOutcome(i, spec.weight_rule.weight(loads[i] * n < w), used)


# ranked allocation vectors -------------------------------------------------


def rejection_count(spec: ProcessSpec, state: LoadState) -> int:
    """Number of bins a thinning-type process rejects as first sample.

    The rejected bins are always the heaviest ones, so this count fully
    determines the ranked vector.
    """
    n, w, loads = state.n, state.total_weight, state.loads
    kind = spec.kind
    if kind in (Kind.MEAN_THINNING, Kind.ONE_PLUS_ZETA):
        return sum(1 for x in loads if x * n >= w)
    if kind is Kind.RELATIVE_THRESHOLD:
        f = spec.scaled_offsets(n)[0]
        return sum(1 for x in loads if x * n - w >= f)
    if kind is Kind.TWO_THINNING:
        f = spec.scaled_offsets(n)[0]
        return sum(1 for x in loads if x * n - state.round >= f)
    if kind is Kind.QUANTILE:
        rank = spec.quantile_rank(n)
        if not spec.by_load:
            return rank
        q = quantile_load(loads, rank)
        return sum(1 for x in loads if x >= q)
    raise ContractViolation(f"{spec.text} is not a thinning process")


def level_counts(spec: ProcessSpec, state: LoadState) -> tuple[int, ...]:
    """For k-relative-threshold: ``c_j`` = bins at or above threshold ``j``."""
    n, w = state.n, state.total_weight
    scaled = spec.scaled_offsets(n)
    return tuple(sum(1 for x in state.loads if x * n - w >= f) for f in scaled)


def thinning_vector(n: int, rejected: int) -> list[Fraction]:
    """Ranked vector of a Two-Thinning process rejecting the ``rejected`` heaviest bins."""
    lo = Fraction(rejected, n * n)
    hi = Fraction(n + rejected, n * n)
    return [lo] * rejected + [hi] * (n - rejected)


def k_threshold_vector(n: int, counts: Sequence[int]) -> list[Fraction]:
    """Ranked vector of a k-threshold process from the nested counts ``c_1 <= ... <= c_k``.

    A bin at level ``L`` wins when it is the first sample and the second is at
    a level ``<= L``, or it is the second sample and the first is strictly
    lower, which gives ``(c_{L+1} + c_L) / n^2`` with ``c_0 = 0``, ``c_{k+1} = n``.
    """
    bounds = [0, *counts, n]
    if any(a > b for a, b in zip(bounds, bounds[1:])):
        raise ContractViolation(f"level counts {tuple(counts)} are not nested")
    vec: list[Fraction] = []
    for level in range(len(bounds) - 1):
        size = bounds[level + 1] - bounds[level]
        vec.extend([Fraction(bounds[level + 1] + bounds[level], n * n)] * size)
    return vec


def two_choice_vector(n: int) -> list[Fraction]:
    return [Fraction(2 * i - 1, n * n) for i in range(1, n + 1)]


def uniform_vector(n: int) -> list[Fraction]:
    return [Fraction(1, n)] * n


def mix(weight: Fraction, p: Sequence[Fraction], q: Sequence[Fraction]) -> list[Fraction]:
    """``weight * p + (1 - weight) * q`` entrywise."""
    return [weight * a + (1 - weight) * b for a, b in zip(p, q)]


def ranked_probability_vector(spec: ProcessSpec, state: LoadState) -> list[Fraction]:
    """Exact allocation probabilities by rank, heaviest bin first.

    Among bins of equal load the split between ranks follows the closed forms;
    only sums over a group of tied bins are meaningful as per-bin marginals.
    """
    n = state.n
    kind = spec.kind
    if kind in (Kind.ONE_CHOICE, Kind.TWINNING):
        return uniform_vector(n)
    if kind is Kind.TWO_CHOICE:
        return two_choice_vector(n)
    if kind is Kind.ONE_PLUS_BETA:
        return mix(spec.beta, two_choice_vector(n), uniform_vector(n))
    if kind is Kind.ONE_PLUS_ZETA:
        return mix(spec.zeta, thinning_vector(n, rejection_count(spec, state)), uniform_vector(n))
    if kind in THINNING_KINDS:
        return thinning_vector(n, rejection_count(spec, state))
    if kind is Kind.K_RELATIVE_THRESHOLD:
        return k_threshold_vector(n, level_counts(spec, state))
    raise AssertionError(kind)  # pragma: no cover


def bin_probabilities(spec: ProcessSpec, loads: np.ndarray, total_weight: int, round: int) -> np.ndarray:
    """Per-bin allocation probabilities in floating point.

    Ranked entries are averaged over groups of tied loads, which is the true
    per-bin marginal under any tie-breaking rule that is symmetric in bins.
    """
    loads = np.asarray(loads, dtype=np.int64)
    n = loads.size
    order = np.argsort(-loads, kind="stable")
    ranked_loads = loads[order]
    dev = ranked_loads * n - total_weight
    ranks = np.arange(1, n + 1, dtype=np.float64)
    kind = spec.kind
    uniform = np.full(n, 1.0 / n)

    def thin(rejected: int) -> np.ndarray:
        return np.where(ranks <= rejected, rejected / n**2, (n + rejected) / n**2)

    if kind in (Kind.ONE_CHOICE, Kind.TWINNING):
        ranked = uniform
    elif kind is Kind.TWO_CHOICE:
        ranked = (2 * ranks - 1) / n**2
    elif kind is Kind.ONE_PLUS_BETA:
        b = float(spec.beta)
        ranked = b * (2 * ranks - 1) / n**2 + (1 - b) * uniform
    elif kind in (Kind.MEAN_THINNING, Kind.ONE_PLUS_ZETA):
        p = thin(int(np.count_nonzero(dev >= 0)))
        ranked = p if kind is Kind.MEAN_THINNING else float(spec.zeta) * p + (1 - float(spec.zeta)) * uniform
    elif kind is Kind.RELATIVE_THRESHOLD:
        ranked = thin(int(np.count_nonzero(dev >= spec.scaled_offsets(n)[0])))
    elif kind is Kind.TWO_THINNING:
        ranked = thin(int(np.count_nonzero(ranked_loads * n - round >= spec.scaled_offsets(n)[0])))
    elif kind is Kind.QUANTILE:
        rank = spec.quantile_rank(n)
        if spec.by_load:
            rank = int(np.count_nonzero(ranked_loads >= ranked_loads[rank - 1]))
        ranked = thin(rank)
    elif kind is Kind.K_RELATIVE_THRESHOLD:
        counts = [int(np.count_nonzero(dev >= f)) for f in spec.scaled_offsets(n)]
        ranked = np.array([float(p) for p in k_threshold_vector(n, counts)])
    else:  # pragma: no cover
        raise AssertionError(kind)

    # average over runs of equal load
    starts = np.flatnonzero(np.r_[True, ranked_loads[1:] != ranked_loads[:-1]])
    sizes = np.diff(np.r_[starts, n])
    averaged = np.repeat(np.add.reduceat(ranked, starts) / sizes, sizes)
    out = np.empty(n)
    out[order] = averaged
    return out
