"""Acceptance criteria for the simulator, the exact oracles and the audits.

Each criterion prints one ``PASS``/``FAIL`` line with the measured values.
Run under pytest, or directly with ``python tests/test_acceptance.py`` for
just the verdict lines.  Expensive runs are cached and shared between
criteria.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import pytest

from meanbias.conditions import audit_claims
from meanbias.couplings import coupled_dominance_run
from meanbias.engine import InitialState, SimConfig, run, run_repetitions
from meanbias.metrics import PotentialConfig
from meanbias.oracle import consistency_suite, counterexample_threshold, drift_suite, potential_ratio
from meanbias.processes import ProcessSpec, parse_spec
from meanbias.rng import derive_seed

SEED = 20240

# criterion 1: gap tables at n = 10^3, m = 10^6, 100 repetitions
TABLE_N = 1000
TABLE_M = 1000 * TABLE_N
TABLE_REPS = 100
TWO_CHOICE_MIN_SHARE = 0.85
MEDIAN_RANGES = {
    "mean-thinning": (5, 7),
    "quantile:0.5": (4, 6),
    "twinning": (9, 12),
    "one-plus-beta:0.5": (13, 16),
}
MEAN_THINNING_SUPPORT = (3, 13)
BUCKET_TOLERANCE = 15  # percentage points
PUBLISHED = {
    "one-plus-beta:0.5": {12: 5, 13: 15, 14: 31, 15: 21, 16: 15, 17: 5, 18: 4, 19: 2, 20: 1, 21: 1},
    "twinning": {8: 3, 9: 21, 10: 25, 11: 18, 12: 13, 13: 8, 14: 9, 17: 3},
    "mean-thinning": {4: 2, 5: 38, 6: 35, 7: 15, 8: 8, 9: 1, 12: 1},
    "quantile:0.5": {3: 1, 4: 11, 5: 46, 6: 33, 7: 6, 8: 2, 10: 1},
    "two-choice": {2: 93, 3: 7},
}

# criterion 2: logarithmic scaling
SCALING_NS = (1000, 10_000)
SCALING_SEEDS = 20
SCALING_GAP_FACTOR = 4  # max gap <= 4 ln n
SCALING_RATIO = (0.9, 2.5)

# criterion 3
LOWER_GAP = 3
LOWER_SHARE = 0.95

# criterion 4
COUPLING_N = 100
COUPLING_M = 100_000
COUPLING_SEEDS = 20

# criterion 5 / 11
DRIFT_TIME_LIMIT = 60.0

# criterion 7
B1_ALPHA = Fraction(1, 10)
B1_N_MAX = 400

# criterion 8
TRACE_N = 1000
TRACE_ALPHA = 0.5
TRACE_SHRINK = Fraction(1, 10)
TRACE_WINDOW = 10 * TRACE_N
TRACE_WINDOWS = 10

# criterion 9
BURN_IN = round(10 * TABLE_N * math.log(TABLE_N))
GOOD_WINDOW = 10 * TABLE_N
GOOD_EPSILON = Fraction(1, 10)
GOOD_FRACTION = 0.5
GOOD_SHARE = 0.95
GOOD_SEEDS = 50

# criterion 10
EFFICIENCY_SEEDS = 50
EFFICIENCY_FLOORS = {"twinning": 1.05, "mean-thinning": 0.55}


@dataclass(frozen=True)
class Verdict:
    criterion: int
    title: str
    ok: bool
    detail: str

    @property
    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} [{self.criterion:>2}] {self.title}: {self.detail}"


# shared runs -------------------------------------------------------------------


@lru_cache(maxsize=None)
def table_report(process: str):
    config = SimConfig(parse_spec(process), TABLE_N, TABLE_M, seed=SEED)
    return run_repetitions(config, TABLE_REPS)


@lru_cache(maxsize=None)
def scaling_report(process: str, n: int):
    config = SimConfig(parse_spec(process), n, 1000 * n, seed=SEED + 1)
    return run_repetitions(config, SCALING_SEEDS)


def share(values, predicate) -> float:
    values = list(values)
    return sum(1 for v in values if predicate(v)) / len(values)


def percentages(histogram: dict[int, int], total: int) -> dict[int, float]:
    return {k: 100 * v / total for k, v in histogram.items()}


def worst_bucket(process: str, histogram: dict[int, int]) -> tuple[int, float]:
    ours = percentages(histogram, TABLE_REPS)
    published = PUBLISHED[process]
    keys = set(ours) | set(published)
    key = max(keys, key=lambda k: abs(ours.get(k, 0) - published.get(k, 0)))
    return key, abs(ours.get(key, 0) - published.get(key, 0))


# criteria ------------------------------------------------------------------


def criterion_1() -> Verdict:
    parts, ok = [], True
    two = table_report("two-choice")
    in_range = share(two.gaps, lambda g: g in (2, 3))
    key, diff = worst_bucket("two-choice", two.histogram)
    good = in_range >= TWO_CHOICE_MIN_SHARE and diff <= BUCKET_TOLERANCE
    ok &= good
    parts.append(f"two-choice {in_range:.0%} in {{2,3}}, worst bucket {key} off by {diff:.0f}pp")
    for process, (lo, hi) in MEDIAN_RANGES.items():
        report = table_report(process)
        median = statistics.median(report.gaps)
        key, diff = worst_bucket(process, report.histogram)
        good = lo <= median <= hi and diff <= BUCKET_TOLERANCE
        if process == "mean-thinning":
            low, high = MEAN_THINNING_SUPPORT
            good &= all(low <= g <= high for g in report.gaps)
        ok &= good
        parts.append(
            f"{process} median {median:g} (want [{lo},{hi}]), worst bucket {key} off by {diff:.0f}pp"
            + ("" if good else " <-")
        )
    return Verdict(1, "gap distributions at n=1e3, m=1e6", ok, "; ".join(parts))


def criterion_2() -> Verdict:
    parts, ok = [], True
    for process in ("mean-thinning", "twinning"):
        means = []
        for n in SCALING_NS:
            report = scaling_report(process, n)
            biggest = max(float(s.gap) for s in report.summaries)
            limit = SCALING_GAP_FACTOR * math.log(n)
            ok &= biggest <= limit
            means.append(report.mean_gap)
            parts.append(f"{process} n={n} max gap {biggest:.2f} <= {limit:.1f}")
        ratio = means[1] / means[0]
        ok &= SCALING_RATIO[0] <= ratio <= SCALING_RATIO[1]
        parts.append(f"{process} mean-gap ratio {ratio:.2f}")
    return Verdict(2, "logarithmic gap scaling", ok, "; ".join(parts))


def criterion_3() -> Verdict:
    report = table_report("mean-thinning")
    frac = share(report.summaries, lambda s: s.gap >= LOWER_GAP)
    return Verdict(
        3,
        "Mean-Thinning gap lower bound",
        frac >= LOWER_SHARE,
        f"{frac:.0%} of {TABLE_REPS} runs have gap >= {LOWER_GAP} (min {min(report.gaps)})",
    )


def criterion_4() -> Verdict:
    base = math.ceil(math.log(COUPLING_N))
    violations, rounds = [], 0
    for f in (0, base, 3 * base):
        for r in range(COUPLING_SEEDS):
            report = coupled_dominance_run(f, COUPLING_N, COUPLING_M, derive_seed(SEED, r))
            rounds += report.rounds_checked
            if not report.ok:
                violations.append((f, r, report.violation))
    detail = f"f in {{0,{base},{3 * base}}}, {COUPLING_SEEDS} seeds, {rounds} rounds checked, {len(violations)} violations"
    if violations:
        detail += f"; first {violations[0]}"
    return Verdict(4, "coupled dominance and shift identity", not violations, detail)


def criterion_5() -> Verdict:
    start = time.perf_counter()
    summaries = drift_suite()
    elapsed = time.perf_counter() - start
    ok = all(s.passed for s in summaries) and elapsed < DRIFT_TIME_LIMIT
    detail = ", ".join(f"{s.name} {s.checked} checked/{len(s.failures) + len(s.undecided)} bad" for s in summaries)
    return Verdict(5, "exact drift inequalities", ok, f"{detail}; {elapsed:.1f}s")


def criterion_6() -> Verdict:
    summaries = audit_claims()
    failures = sum(s.failures for s in summaries)
    checked = sum(s.checked for s in summaries)
    bad = [f"{s.claim.process} {s.claim.condition.value}" for s in summaries if not s.holds]
    detail = f"{len(summaries)} claims, {checked} profiles, {failures} failures"
    if bad:
        detail += " (" + ", ".join(bad) + ")"
    return Verdict(6, "condition audits over n <= 64", failures == 0, detail)


def criterion_7() -> Verdict:
    threshold, reports = counterexample_threshold(B1_ALPHA, B1_N_MAX)
    deltas = all(r.delta == Fraction(r.n - 2, r.n) for r in reports)
    ok = threshold is not None and deltas
    return Verdict(
        7,
        "counterexample growth",
        ok,
        f"ratio >= 1 + 0.2 alpha^2/n for every even n in [{threshold}, {B1_N_MAX}] at alpha={B1_ALPHA}; "
        f"delta = (n-2)/n: {deltas}",
    )


def criterion_8() -> Verdict:
    n = TRACE_N
    m = round(50 * n * math.log(n))
    potentials = PotentialConfig(alpha=TRACE_ALPHA)
    level = run(SimConfig(ProcessSpec.mean_thinning(), n, m, seed=SEED, initial=InitialState("two-level"),
                          potentials=potentials))
    first, last = level.trace[0], level.trace[-1]
    abs_ratio = last.abs_potential / first.abs_potential
    quad_ratio = last.quad_potential / first.quad_potential
    lam_ok = last.log_exp_potential <= math.log(20 * n)
    level_ok = abs_ratio <= TRACE_SHRINK and quad_ratio <= TRACE_SHRINK and lam_ok

    spec = ProcessSpec.mean_thinning()
    steps = TRACE_WINDOW * TRACE_WINDOWS
    b1 = run(SimConfig(spec, n, steps, seed=SEED, snapshot_every=n, initial=InitialState("claim-b1"),
                       potentials=potentials, keep_states=True))
    early = [s for s in b1.states if s.round - b1.states[0].round <= TRACE_WINDOW]
    growth = [float(potential_ratio(spec, s, TRACE_ALPHA)) - 1 for s in early]
    per_window = TRACE_WINDOW // n
    rows = b1.trace[1:]
    averages = [
        statistics.fmean(float(r.abs_potential) for r in rows[i : i + per_window])
        for i in range(0, len(rows), per_window)
    ]
    falling = all(b < a for a, b in zip(averages, averages[1:]))
    b1_ok = min(growth) > 0 and falling
    detail = (
        f"two-level: Delta ratio {float(abs_ratio):.3f}, Upsilon ratio {float(quad_ratio):.3f} (want <= 0.1), "
        f"ln Lambda {last.log_exp_potential:.2f} <= ln(20n) {math.log(20 * n):.2f}; "
        f"claim-b1 start: E[Lambda']/Lambda - 1 in [{min(growth):.2e}, {max(growth):.2e}] over the first "
        f"{TRACE_WINDOW} rounds, {len(averages)} window averages of Delta strictly falling: {falling}"
    )
    return Verdict(8, "potential trajectories", level_ok and b1_ok, detail)


def criterion_9() -> Verdict:
    parts, ok = [], True
    for process in ("mean-thinning", "twinning"):
        config = SimConfig(parse_spec(process), TABLE_N, BURN_IN + GOOD_WINDOW, seed=SEED, epsilon=GOOD_EPSILON,
                           good_window=(BURN_IN, BURN_IN + GOOD_WINDOW))
        report = run_repetitions(config, GOOD_SEEDS)
        fractions = [s.good_fraction for s in report.summaries]
        frac = share(fractions, lambda f: f >= GOOD_FRACTION)
        ok &= frac >= GOOD_SHARE
        parts.append(f"{process}: {frac:.0%} of seeds at >= {GOOD_FRACTION} (lowest {min(fractions):.2f})")
    return Verdict(9, "mean-quantile stabilization", ok, "; ".join(parts))


def criterion_10() -> Verdict:
    parts, ok = [], True
    for process, floor in EFFICIENCY_FLOORS.items():
        config = SimConfig(parse_spec(process), TABLE_N, TABLE_M, seed=SEED + 2)
        etas = [float(s.efficiency) for s in run_repetitions(config, EFFICIENCY_SEEDS).summaries]
        ok &= min(etas) >= floor
        parts.append(f"{process} eta in [{min(etas):.4f}, {max(etas):.4f}] (floor {floor})")
    for process, exact in (("one-choice", Fraction(1)), ("two-choice", Fraction(1, 2))):
        config = SimConfig(parse_spec(process), TABLE_N, TABLE_M, seed=SEED + 2)
        etas = {s.efficiency for s in run_repetitions(config, 3).summaries}
        ok &= etas == {exact}
        parts.append(f"{process} eta = {', '.join(map(str, sorted(etas)))}")
    return Verdict(10, "sample efficiency", ok, "; ".join(parts))


def criterion_11() -> Verdict:
    summary = consistency_suite()
    return Verdict(
        11,
        "enumerated marginals equal ranked vectors",
        summary.passed,
        f"{summary.checked} (process, state) pairs, {len(summary.failures)} mismatches",
    )


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10, criterion_11]


@pytest.mark.slow
@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda c: c.__name__)
def test_criterion(criterion, capsys):
    verdict = criterion()
    with capsys.disabled():
        print("\n" + verdict.line)
    assert verdict.ok, verdict.line


if __name__ == "__main__":
    for criterion in CRITERIA:
        print(criterion().line, flush=True)
