"""Seeded simulation runs, snapshot traces and parallel repetitions.

A run drives one kernel simulator (compiled when available) and computes the
potentials only at snapshot rounds.  ``reference_run`` replays the same random
stream through :func:`meanbias.processes.step` one allocation at a time and
checks the per-allocation invariants along the way; the two must agree
exactly.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import kernels
from .core import (
    ContractViolation,
    LoadState,
    apply_allocation,
    exact_fraction,
    floor_gap,
    gap,
    overloaded_count,
    scaled_deviations,
)
from .metrics import GoodRoundCounter, MetricsRow, PotentialConfig, check_row, sample_efficiency, snapshot
from .processes import ProcessSpec, step
from .rng import RandomSource, derive_seed, make_bit_generator

INT64_MAX = (1 << 63) - 1
LOG_SNAPSHOTS = 200


class OverflowRisk(ContractViolation):
    """The configured run could exceed 64-bit integer arithmetic."""


class ConsistencyError(AssertionError):
    """Incrementally maintained statistics disagree with a from-scratch recomputation."""


@dataclass(frozen=True)
class InitialState:
    """How the loads at round 0 are built.

    ``kind`` is one of ``empty``, ``two-level``, ``claim-b1`` or ``explicit``.
    A two-level start puts ``floor(fraction * n)`` bins at load ``2h`` and the
    rest at 0; ``h`` defaults to ``floor(ln n)``.
    """

    kind: str = "empty"
    h: int | None = None
    fraction: Fraction = Fraction(1, 2)
    loads: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("empty", "two-level", "claim-b1", "explicit"):
            raise ContractViolation(f"unknown initial state {self.kind!r}")
        object.__setattr__(self, "fraction", Fraction(self.fraction))
        if not 0 <= self.fraction <= 1:
            raise ContractViolation("two-level fraction must lie in [0, 1]")
        if self.h is not None and self.h < 0:
            raise ContractViolation("two-level height must be non-negative")
        if self.kind == "explicit" and not self.loads:
            raise ContractViolation("explicit initial state needs loads")

    @classmethod
    def parse(cls, text: str) -> InitialState:
        """Accepts ``empty``, ``two-level``, ``two-level:<h>``, ``claim-b1`` or ``file:<path>``."""
        name, _, arg = text.strip().partition(":")
        if name == "file":
            return cls.from_file(arg)
        if name == "two-level":
            return cls("two-level", h=int(arg) if arg else None)
        if arg:
            raise ContractViolation(f"initial state {name!r} takes no argument")
        return cls(name)

    @classmethod
    def from_file(cls, path: str | Path) -> InitialState:
        """Read whitespace- or comma-separated integer loads."""
        text = Path(path).read_text()
        try:
            loads = tuple(int(tok) for tok in text.replace(",", " ").split())
        except ValueError as exc:
            raise ContractViolation(f"bad load file {path}: {exc}") from None
        return cls("explicit", loads=loads)

    def build(self, n: int) -> LoadState:
        if self.kind == "empty":
            return LoadState.empty(n)
        if self.kind == "two-level":
            h = self.h if self.h is not None else math.floor(math.log(n))
            high = math.floor(self.fraction * n)
            return LoadState.from_loads([2 * h] * high + [0] * (n - high))
        if self.kind == "claim-b1":
            from .oracle import claim_b1_state

            return claim_b1_state(n)
        if len(self.loads) != n:
            raise ContractViolation(f"initial loads have {len(self.loads)} bins, expected n={n}")
        return LoadState.from_loads(self.loads)

    @property
    def text(self) -> str:
        if self.kind == "two-level" and self.h is not None:
            return f"two-level:{self.h}"
        return self.kind


@dataclass(frozen=True)
class SimConfig:
    """One simulation: process, size, seed and what to record.

    ``snapshot_every`` is a positive integer, ``"log"`` for roughly
    log-spaced rounds, or ``None`` for the first and last round only.
    Good rounds are counted over ``good_window = (t0, t1)``, meaning the
    rounds ``t0 <= t < t1`` (the whole run when unset).  With ``keep_states``
    the full load vector is kept alongside every trace row.
    """

    process: ProcessSpec
    n: int
    m: int
    seed: int = 0
    snapshot_every: int | str | None = None
    initial: InitialState = field(default_factory=InitialState)
    potentials: PotentialConfig | None = None
    epsilon: Fraction = Fraction(1, 10)
    good_window: tuple[int, int] | None = None
    debug: bool = False
    keep_states: bool = False

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ContractViolation("n must be positive")
        if self.m < 0:
            raise ContractViolation("m must be non-negative")
        if not 0 <= self.seed < 1 << 64:
            raise ContractViolation("seed must be an unsigned 64-bit integer")
        every = self.snapshot_every
        if every is not None and every != "log" and not (isinstance(every, int) and every > 0):
            raise ContractViolation(f"snapshot_every must be a positive integer or 'log', got {every!r}")
        object.__setattr__(self, "epsilon", exact_fraction(self.epsilon))
        if not 0 < self.epsilon < Fraction(1, 2):
            raise ContractViolation("epsilon must lie in (0, 1/2)")
        if self.good_window is not None:
            t0, t1 = self.good_window
            if not 0 <= t0 <= t1 <= self.m:
                raise ContractViolation(f"good window {self.good_window} outside [0, {self.m}]")

    @property
    def potential_config(self) -> PotentialConfig:
        if self.potentials is not None:
            return self.potentials
        return PotentialConfig.default(self.process.weight_rule.w_minus)


@dataclass
class RunResult:
    config: SimConfig
    final: LoadState
    trace: list[MetricsRow]
    good: GoodRoundCounter
    samples: int
    wall_time: float
    initial_weight: int = 0
    states: list[LoadState] = field(default_factory=list)

    @property
    def gap(self) -> Fraction:
        return gap(self.final)

    @property
    def floor_gap(self) -> int:
        return floor_gap(self.final)

    @property
    def efficiency(self) -> Fraction:
        return sample_efficiency(self.samples, self.final.total_weight - self.initial_weight)


def check_overflow(config: SimConfig, initial: LoadState) -> None:
    """Reject runs whose scaled loads ``x * n`` could leave the int64 range."""
    heaviest_weight = max(config.process.weight_rule.w_plus, config.process.weight_rule.w_minus)
    worst = (initial.total_weight + config.m * heaviest_weight) * config.n
    offsets = config.process.scaled_offsets(config.n) if config.process.offsets else []
    worst += max((abs(f) for f in offsets), default=0)
    if worst > INT64_MAX:
        raise OverflowRisk(
            f"n={config.n}, m={config.m} can reach scaled load {worst}, beyond 64-bit range"
        )


def snapshot_rounds(m: int, every: int | str | None) -> list[int]:
    """Rounds (counted from the start of the run) at which a trace row is taken."""
    if every is None:
        points = {0, m}
    elif every == "log":
        points = {0, m, *(int(t) for t in np.unique(np.geomspace(1, max(m, 1), LOG_SNAPSHOTS).round()))}
    else:
        points = {*range(0, m + 1, every), m}
    return sorted(t for t in points if 0 <= t <= m)


def _good_counter(config: SimConfig) -> GoodRoundCounter:
    return GoodRoundCounter(config.epsilon)


def _sim_state(sim) -> LoadState:
    return LoadState(tuple(int(x) for x in sim.loads()), sim.total_weight, sim.round)


def _cross_check(sim, state: LoadState) -> None:
    expected = (overloaded_count(state), max(state.loads), min(state.loads))
    actual = (sim.overloaded, sim.max_load, sim.min_load)
    if expected != actual:
        raise ConsistencyError(
            f"round {state.round}: incremental (overloaded, max, min) = {actual}, recomputed {expected}"
        )


def _new_simulator(config: SimConfig, initial: LoadState, good_bounds: tuple[int, int], seed: int):
    params = kernels.KernelParams.from_spec(config.process, config.n)
    return kernels.simulator(
        np.asarray(initial.loads, dtype=np.int64),
        initial.total_weight,
        initial.round,
        0,
        params,
        make_bit_generator(seed),
        *good_bounds,
    )


def run(config: SimConfig) -> RunResult:
    """Simulate ``config.m`` allocations and record the snapshot trace.

    Deterministic in ``config``: the trace, final state and counters are a
    function of the configuration and seed only.
    """
    start = time.perf_counter()
    initial = config.initial.build(config.n)
    check_overflow(config, initial)
    good = _good_counter(config)
    lo, hi = good.bounds(config.n)
    sim = _new_simulator(config, initial, (lo, hi), config.seed)
    pcfg = config.potential_config
    t0, t1 = config.good_window if config.good_window is not None else (0, config.m)

    stops = sorted(set(snapshot_rounds(config.m, config.snapshot_every)) | {t0, t1})
    trace: list[MetricsRow] = []
    states: list[LoadState] = []
    takes = set(snapshot_rounds(config.m, config.snapshot_every))
    done = 0
    good_before = counted_before = 0
    for stop in stops:
        if stop > done:
            sim.advance(stop - done)
            done = stop
        if done == t0:
            good_before, counted_before = sim.good_rounds, sim.counted_rounds
        if done == t1:
            good.good_rounds = sim.good_rounds - good_before
            good.counted_rounds = sim.counted_rounds - counted_before
            good.window = (t0, t1)
        if done in takes:
            state = _sim_state(sim)
            row = snapshot(state, pcfg, sim.samples)
            if config.debug:
                _cross_check(sim, state)
                problems = check_row(row, config.n, pcfg.alpha)
                if problems:
                    raise ConsistencyError(f"round {state.round}: " + "; ".join(problems))
            trace.append(row)
            if config.keep_states:
                states.append(state)
    final = _sim_state(sim)
    return RunResult(
        config, final, trace, good, sim.samples, time.perf_counter() - start, initial.total_weight, states
    )


def reference_run(config: SimConfig) -> RunResult:
    """Allocation-by-allocation replay through ``processes.step`` with invariant checks.

    Uses the same random stream as :func:`run`, so on any configuration both
    must return the same final state, sample count and trace.  Meant for
    small ``n``; every allocation costs ``O(n)``.
    """
    start = time.perf_counter()
    state = initial = config.initial.build(config.n)
    check_overflow(config, state)
    rng = RandomSource(config.seed)
    pcfg = config.potential_config
    good = _good_counter(config)
    t0, t1 = config.good_window if config.good_window is not None else (0, config.m)
    takes = set(snapshot_rounds(config.m, config.snapshot_every))
    w_minus = config.process.weight_rule.w_minus
    unit = config.process.weight_rule.w_plus == w_minus == 1
    n = config.n
    samples = 0
    trace = [snapshot(state, pcfg, 0)] if 0 in takes else []
    states = [state] if 0 in takes and config.keep_states else []
    for t in range(config.m):
        if t0 <= t < t1:
            good.record(t, Fraction(overloaded_count(state), n))
        outcome = step(config.process, state, rng)
        samples += outcome.samples_used
        nxt = apply_allocation(state, outcome.bin, outcome.weight)
        _check_allocation(state, nxt, outcome.weight, w_minus, unit)
        state = nxt
        if t + 1 in takes:
            row = snapshot(state, pcfg, samples)
            problems = check_row(row, n, pcfg.alpha)
            if problems:
                raise ConsistencyError(f"round {state.round}: " + "; ".join(problems))
            trace.append(row)
            if config.keep_states:
                states.append(state)
    if good.window is None:
        good.window = (t0, t1)
    return RunResult(
        config, state, trace, good, samples, time.perf_counter() - start, initial.total_weight, states
    )


def _check_allocation(before: LoadState, after: LoadState, weight: int, w_minus: int, unit: bool) -> None:
    n = before.n
    if sum(after.loads) != after.total_weight or after.total_weight != before.total_weight + weight:
        raise ConsistencyError(f"round {after.round}: weight not conserved")
    d0 = scaled_deviations(before)
    d1 = scaled_deviations(after)
    # n^2 times the change of the quadratic potential, against n^2 times its bound
    change = abs(sum(d * d for d in d1) - sum(d * d for d in d0))
    bound = 4 * w_minus * max(abs(d) for d in d0) * n + 2 * w_minus * w_minus * n * n
    if change > bound:
        raise ConsistencyError(f"round {after.round}: quadratic potential moved by more than its bound")
    if unit:
        rise = max(d1) - max(d0)
        if not -1 <= rise <= n - 1:
            raise ConsistencyError(f"round {after.round}: gap moved by {Fraction(rise, n)}")
        if overloaded_count(after) > overloaded_count(before) + 1:
            raise ConsistencyError(f"round {after.round}: mean quantile rose by more than 1/n")


# repetitions ---------------------------------------------------------------


@dataclass(frozen=True)
class RepetitionSummary:
    rep: int
    seed: int
    gap: Fraction
    floor_gap: int
    efficiency: Fraction
    good_fraction: float | None
    samples: int
    weight: int


@dataclass
class RepetitionReport:
    config: SimConfig
    summaries: list[RepetitionSummary]

    @property
    def histogram(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for s in self.summaries:
            counts[s.floor_gap] = counts.get(s.floor_gap, 0) + 1
        return dict(sorted(counts.items()))

    @property
    def gaps(self) -> list[int]:
        return [s.floor_gap for s in self.summaries]

    @property
    def mean_gap(self) -> float:
        return float(sum(s.gap for s in self.summaries) / len(self.summaries))

    @property
    def mean_efficiency(self) -> float:
        return float(sum(s.efficiency for s in self.summaries) / len(self.summaries))


def thread_count(reps: int) -> int:
    cap = os.environ.get("MEANBIAS_THREADS", "").strip()
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(reps, limit))


def _summarize(config: SimConfig, rep: int) -> RepetitionSummary:
    seed = derive_seed(config.seed, rep)
    initial = config.initial.build(config.n)
    sim = _new_simulator(config, initial, _good_counter(config).bounds(config.n), seed)
    t0, t1 = config.good_window if config.good_window is not None else (0, config.m)
    sim.advance(t0)
    sim.reset_good()
    sim.advance(t1 - t0)
    good_fraction = sim.good_rounds / sim.counted_rounds if sim.counted_rounds else None
    sim.advance(config.m - t1)
    n, w = config.n, sim.total_weight
    return RepetitionSummary(
        rep=rep,
        seed=seed,
        gap=Fraction(sim.max_load * n - w, n),
        floor_gap=(sim.max_load * n - w) // n,
        efficiency=sample_efficiency(sim.samples, w - initial.total_weight) if sim.samples else Fraction(0),
        good_fraction=good_fraction,
        samples=sim.samples,
        weight=w,
    )


def run_repetitions(config: SimConfig, reps: int, threads: int | None = None) -> RepetitionReport:
    """Run ``reps`` independent copies of ``config``; repetition ``r`` uses ``derive_seed(seed, r)``.

    Only the final state of each copy is summarized; no trace is recorded.
    The result is ordered by repetition index whatever the scheduling.
    """
    if reps < 1:
        raise ContractViolation("reps must be at least 1")
    check_overflow(config, config.initial.build(config.n))
    workers = threads if threads is not None else thread_count(reps)
    if workers <= 1:
        summaries = [_summarize(config, r) for r in range(reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(lambda r: _summarize(config, r), range(reps)))
    return RepetitionReport(config, summaries)
