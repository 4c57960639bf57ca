import math
from fractions import Fraction

import pytest
from helpers import load_states
from hypothesis import given
from hypothesis import strategies as st

from meanbias.core import ContractViolation, LoadState, apply_allocation
from meanbias.metrics import (
    GoodRoundCounter,
    MetricsRow,
    PotentialConfig,
    absolute_potential,
    check_row,
    exponential_potential_log,
    good_round_fraction,
    quadratic_change_bound,
    quadratic_exponential_ratio_bound,
    quadratic_potential,
    sample_efficiency,
    snapshot,
)
from meanbias.oracle import claim_b1_state


def state(*loads):
    return LoadState.from_loads(loads)


@pytest.mark.parametrize(
    "loads, delta_pot, upsilon",
    [((2, 2, 2), 0, 0), ((2, 0), 2, 2), ((3, 1, 1, 1), 3, 3)],
)
def test_absolute_and_quadratic(loads, delta_pot, upsilon):
    s = state(*loads)
    assert absolute_potential(s) == delta_pot
    assert quadratic_potential(s) == upsilon


def test_exponential_potential_examples():
    assert exponential_potential_log(state(4, 4, 4, 4), 0.7) == pytest.approx(math.log(4), rel=1e-12)
    assert exponential_potential_log(state(2, 0), 1.0) == pytest.approx(math.log(2 * math.e), rel=1e-12)


def test_exponential_potential_survives_huge_deviations():
    n = 200
    s = claim_b1_state(n)
    log_lam = exponential_potential_log(s, 1.0)
    assert math.isfinite(log_lam)
    # the n^2 entry dominates; every other term is exponentially smaller
    assert log_lam == pytest.approx(n * n, rel=1e-12)


def test_exponential_potential_needs_positive_alpha():
    with pytest.raises(ContractViolation):
        exponential_potential_log(state(1, 0), 0)


def test_sample_efficiency():
    assert sample_efficiency(100, 100) == 1
    assert sample_efficiency(200, 100) == Fraction(1, 2)
    assert sample_efficiency(50, 100) == 2
    with pytest.raises(ContractViolation):
        sample_efficiency(0, 0)


def rows(deltas):
    s = state(1, 0)
    cfg = PotentialConfig()
    base = snapshot(s, cfg, 0)
    return [
        MetricsRow(t, base.gap, base.min_gap, d, base.abs_potential, base.quad_potential,
                   base.log_exp_potential, base.log_weak_potential, 0, 1)
        for t, d in enumerate(deltas)
    ]


def test_good_round_fraction_examples():
    assert good_round_fraction(rows([Fraction(1, 2)] * 10), 0.1, (0, 9)) == 1.0
    assert good_round_fraction(rows([Fraction(1)] * 10), 0.1, (0, 9)) == 0.0
    mixed = rows([Fraction(1, 2), Fraction(1), Fraction(1, 10), Fraction(9, 10)])
    assert good_round_fraction(mixed, Fraction(1, 10), (0, 3)) == 0.75
    assert good_round_fraction(mixed, Fraction(1, 10), (1, 1)) == 0.0


def test_good_round_fraction_rejects_empty_window():
    with pytest.raises(ContractViolation):
        good_round_fraction(rows([Fraction(1, 2)] * 3), 0.1, (5, 8))


def test_good_round_counter_bounds():
    counter = GoodRoundCounter(Fraction(1, 10))
    assert counter.bounds(1000) == (100, 900)
    assert counter.bounds(7) == (1, 6)
    with pytest.raises(ContractViolation):
        GoodRoundCounter(Fraction(1, 2))
    with pytest.raises(ContractViolation):
        GoodRoundCounter(Fraction(1, 10)).fraction


def test_potential_config_defaults():
    assert PotentialConfig.default().alpha == 0.5
    assert PotentialConfig.default(2).alpha == 0.25
    assert PotentialConfig().weak(100) == 0.01
    with pytest.raises(ContractViolation):
        PotentialConfig(alpha=-1)


@given(load_states(max_n=10, max_load=40), st.sampled_from([0.05, 0.25, 0.5, 1.0]))
def test_snapshot_invariants(s, alpha):
    row = snapshot(s, PotentialConfig(alpha=alpha), samples=1)
    assert check_row(row, s.n, alpha) == []
    assert row.log_exp_potential >= math.log(s.n) - 1e-12
    assert row.abs_potential**2 <= s.n * row.quad_potential


@given(load_states(max_n=10, max_load=40), st.sampled_from([0.1, 0.5, 1.0]))
def test_quadratic_bounded_by_exponential(s, alpha):
    upsilon = float(quadratic_potential(s))
    lam = math.exp(exponential_potential_log(s, alpha))
    assert upsilon <= quadratic_exponential_ratio_bound(alpha) * lam * (1 + 1e-12)


@given(load_states(max_n=8), st.data(), st.integers(1, 3))
def test_one_allocation_quadratic_change(s, data, w_minus):
    i = data.draw(st.integers(0, s.n - 1))
    weight = data.draw(st.integers(1, w_minus))
    after = apply_allocation(s, i, weight)
    max_abs_y = max(abs(Fraction(x * s.n - s.total_weight, s.n)) for x in s.loads)
    change = abs(quadratic_potential(after) - quadratic_potential(s))
    assert change <= quadratic_change_bound(max_abs_y, w_minus)


def test_check_row_flags_broken_rows():
    row = snapshot(state(3, 1, 1, 1), PotentialConfig(), 1)
    bad = MetricsRow(row.t, row.gap + 100, row.min_gap, row.delta, row.abs_potential,
                     row.quad_potential, row.log_exp_potential, row.log_weak_potential, 1, 6)
    assert "gap exceeds ln(Lambda)/alpha" in check_row(bad, 4, 0.5)
