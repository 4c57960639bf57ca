import dataclasses
import pickle
from fractions import Fraction

import pytest

from meanbias.core import ContractViolation, LoadState, mean_quantile, overloaded_count
from meanbias.engine import (
    ConsistencyError,
    InitialState,
    OverflowRisk,
    SimConfig,
    check_overflow,
    reference_run,
    run,
    run_repetitions,
    snapshot_rounds,
    thread_count,
)
from meanbias.processes import parse_spec


def config(text, n, m, **kw):
    return SimConfig(parse_spec(text), n, m, **kw)


def test_one_choice_single_bin():
    result = run(config("one-choice", 1, 5))
    assert result.final.loads == (5,)
    assert result.gap == 0
    assert result.samples == 5
    assert result.efficiency == 1


def test_runs_are_deterministic():
    cfg = config("mean-thinning", 200, 20_000, seed=7, snapshot_every="log")
    a, b = run(cfg), run(cfg)
    assert a.final == b.final
    assert a.trace == b.trace
    assert pickle.dumps(a.trace) == pickle.dumps(b.trace)
    assert run(dataclasses.replace(cfg, seed=8)).final != a.final


def test_twinning_weight_and_samples():
    m = 50_000
    result = run(config("twinning", 1000, m, seed=2))
    assert m <= result.final.total_weight <= 2 * m
    assert result.samples == m


@pytest.mark.parametrize("text, eta", [("one-choice", 1), ("two-choice", Fraction(1, 2))])
def test_exact_efficiencies(text, eta):
    assert run(config(text, 50, 5000, seed=1)).efficiency == eta


PROCESSES = ["mean-thinning", "twinning", "quantile:0.5", "one-plus-beta:0.5", "k-relative-threshold:log_n,0",
             "two-thinning:const:1"]


@pytest.mark.parametrize("text", PROCESSES)
@pytest.mark.parametrize("init", ["empty", "two-level", "claim-b1"])
def test_fast_run_matches_reference(text, init):
    cfg = config(text, 6, 400, seed=5, snapshot_every=37, initial=InitialState.parse(init), debug=True)
    fast, slow = run(cfg), reference_run(cfg)
    assert fast.final == slow.final
    assert fast.samples == slow.samples
    assert fast.trace == slow.trace
    assert (fast.good.good_rounds, fast.good.counted_rounds) == (slow.good.good_rounds, slow.good.counted_rounds)


def test_debug_mode_cross_checks_every_snapshot():
    result = run(config("twinning", 64, 5000, seed=3, snapshot_every=1, debug=True))
    assert len(result.trace) == 5001
    for row in result.trace:
        assert Fraction(row.delta * 64).denominator == 1


def test_trace_rows_match_final_state():
    result = run(config("mean-thinning", 30, 999, seed=1, snapshot_every=100, keep_states=True))
    assert [row.t for row in result.trace] == [*range(0, 1000, 100), 999]
    assert result.states[-1] == result.final
    assert result.trace[-1].delta == mean_quantile(result.final)


def test_good_window_counts_half_open_range():
    n, m = 20, 2000
    cfg = config("mean-thinning", n, m, seed=4, snapshot_every=1, keep_states=True, good_window=(500, 1500))
    result = run(cfg)
    lo, hi = result.good.bounds(n)
    expected = sum(lo <= overloaded_count(s) <= hi for s in result.states[500:1500])
    assert result.good.counted_rounds == 1000
    assert result.good.good_rounds == expected


def test_snapshot_rounds():
    assert snapshot_rounds(10, None) == [0, 10]
    assert snapshot_rounds(10, 4) == [0, 4, 8, 10]
    log = snapshot_rounds(10**6, "log")
    assert log[0] == 0 and log[-1] == 10**6 and len(log) <= 202


def test_initial_states():
    assert InitialState.parse("two-level").build(1000).loads.count(12) == 500  # h = floor(ln 1000) = 6
    assert InitialState.parse("two-level:3").build(5).loads == (6, 6, 0, 0, 0)
    assert InitialState.parse("empty").text == "empty"
    with pytest.raises(ContractViolation):
        InitialState.parse("ramp")
    with pytest.raises(ContractViolation):
        InitialState("explicit", loads=(1, 2)).build(3)


def test_initial_state_from_file(tmp_path):
    path = tmp_path / "loads.txt"
    path.write_text("3, 1\n1 1\n")
    init = InitialState.parse(f"file:{path}")
    assert init.build(4) == LoadState.from_loads((3, 1, 1, 1))
    result = run(config("mean-thinning", 4, 10, initial=init))
    assert result.final.total_weight == 16
    assert result.efficiency == Fraction(10, result.samples)


def test_overflow_is_rejected_up_front():
    cfg = config("one-choice", 10**6, 10**13)
    with pytest.raises(OverflowRisk):
        run(cfg)
    with pytest.raises(OverflowRisk):
        check_overflow(cfg, LoadState.empty(1))


@pytest.mark.parametrize(
    "kw",
    [dict(n=0), dict(m=-1), dict(seed=-1), dict(snapshot_every=0), dict(epsilon=Fraction(1, 2)),
     dict(good_window=(5, 3)), dict(good_window=(0, 101))],
)
def test_config_validation(kw):
    base = dict(process=parse_spec("one-choice"), n=4, m=100)
    with pytest.raises(ContractViolation):
        SimConfig(**{**base, **kw})


def test_repetitions_are_deterministic_and_order_free():
    cfg = config("mean-thinning", 100, 10_000, seed=3)
    serial = run_repetitions(cfg, 6, threads=1)
    parallel = run_repetitions(cfg, 6, threads=3)
    assert serial.summaries == parallel.summaries
    assert sum(serial.histogram.values()) == 6
    assert all(key >= 0 for key in serial.histogram)


def test_repetition_matches_single_run():
    from meanbias.rng import derive_seed

    cfg = config("twinning", 50, 3000, seed=9)
    rep = run_repetitions(cfg, 2, threads=1).summaries[1]
    single = run(dataclasses.replace(cfg, seed=derive_seed(9, 1)))
    assert rep.floor_gap == single.floor_gap
    assert rep.samples == single.samples
    assert rep.efficiency == single.efficiency


def test_single_repetition_histogram():
    report = run_repetitions(config("two-choice", 10, 100), 1)
    assert len(report.histogram) == 1


def test_thread_count_respects_environment(monkeypatch):
    monkeypatch.setenv("MEANBIAS_THREADS", "2")
    assert thread_count(10) == 2
    assert thread_count(1) == 1


def test_debug_run_surfaces_consistency_errors(monkeypatch):
    from meanbias import engine

    def bad_check(sim, state):
        raise ConsistencyError("forced")

    monkeypatch.setattr(engine, "_cross_check", bad_check)
    with pytest.raises(ConsistencyError):
        run(config("one-choice", 3, 10, debug=True))

