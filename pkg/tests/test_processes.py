from fractions import Fraction

import numpy as np
import pytest
from helpers import ScriptedSampler, load_states
from hypothesis import given
from hypothesis import strategies as st

from meanbias.core import ContractViolation, LoadState
from meanbias.processes import (
    Kind,
    Offset,
    ProcessSpec,
    SpecError,
    WeightRule,
    bin_probabilities,
    parse_spec,
    ranked_probability_vector,
    rejection_count,
    step,
)
from meanbias.rng import RandomSource

F = Fraction


def state(*loads, round=0):
    return LoadState.from_loads(loads, round)


# parsing ---------------------------------------------------------------


@pytest.mark.parametrize(
    "text",
    [
        "one-choice",
        "two-choice",
        "mean-thinning",
        "twinning",
        "one-plus-beta:0.5",
        "one-plus-zeta:0.25",
        "quantile:0.5",
        "quantile:0.5:load",
        "relative-threshold:log_n",
        "relative-threshold:const:3",
        "two-thinning:2*log_n",
        "k-relative-threshold:log_n,0",
        "mean-thinning@1,2",
        "twinning@1,1",
    ],
)
def test_spec_text_round_trips(text):
    assert parse_spec(text).text == text


def test_parse_reads_fractions_exactly():
    assert parse_spec("one-plus-beta:1/3").beta == F(1, 3)
    assert parse_spec("one-plus-beta:0.1").beta == F(1, 10)
    assert parse_spec("twinning").weight_rule == WeightRule(1, 2)


@pytest.mark.parametrize(
    "text, token",
    [
        ("three-choice", "three-choice"),
        ("one-plus-beta:abc", "abc"),
        ("one-plus-beta:2", "2"),
        ("one-plus-beta", "one-plus-beta"),
        ("quantile:0.5:heavy", "heavy"),
        ("relative-threshold:sqrt_n", "sqrt_n"),
        ("relative-threshold:log_n,0", "log_n,0"),
        ("mean-thinning:1", "1"),
        ("mean-thinning@1", "1"),
        ("mean-thinning@0,1", "0,1"),
    ],
)
def test_parse_errors_name_the_token(text, token):
    with pytest.raises(SpecError) as info:
        parse_spec(text)
    assert info.value.token == token


def test_offsets_scale_with_ceiling():
    assert Offset(constant=2).scaled_ceiling(10) == 20
    assert Offset(log_coef=F(1)).scaled_ceiling(100) == 461  # ceil(100 ln 100)
    assert Offset(log_coef=F(1)).scaled_ceiling(1) == 0


def test_k_threshold_offsets_must_decrease():
    spec = parse_spec("k-relative-threshold:0,log_n")
    with pytest.raises(ContractViolation):
        spec.scaled_offsets(10)


# single steps with scripted samples --------------------------------------


def test_mean_thinning_accepts_underloaded_first_sample():
    out = step(ProcessSpec.mean_thinning(), state(2, 0), ScriptedSampler([1]))
    assert (out.bin, out.weight, out.samples_used) == (1, 1, 1)


def test_mean_thinning_rejects_overloaded_first_sample():
    out = step(ProcessSpec.mean_thinning(), state(2, 0), ScriptedSampler([0, 0]))
    assert (out.bin, out.weight, out.samples_used) == (0, 1, 2)


def test_twinning_weights_by_overload_status():
    spec = ProcessSpec.twinning()
    under = step(spec, state(2, 0), ScriptedSampler([1]))
    over = step(spec, state(2, 0), ScriptedSampler([0]))
    assert (under.bin, under.weight, under.samples_used) == (1, 2, 1)
    assert (over.bin, over.weight, over.samples_used) == (0, 1, 1)


def test_bin_at_mean_counts_as_overloaded():
    out = step(ProcessSpec.twinning(), state(1, 1), ScriptedSampler([0]))
    assert out.weight == 1


@given(load_states(max_n=6), st.lists(st.integers(0, 1000), min_size=2, max_size=2))
def test_relative_threshold_zero_coincides_with_mean_thinning(s, draws):
    bins = [d % s.n for d in draws]
    a = step(ProcessSpec.mean_thinning(), s, ScriptedSampler(bins))
    b = step(parse_spec("relative-threshold:0"), s, ScriptedSampler(bins))
    assert a == b


def test_k_threshold_tie_goes_to_first_sample():
    spec = parse_spec("k-relative-threshold:0")
    out = step(spec, state(3, 3, 0), ScriptedSampler([1, 0]))
    assert (out.bin, out.samples_used) == (1, 2)


def test_k_threshold_accepts_first_sample_below_every_threshold():
    spec = parse_spec("k-relative-threshold:0")
    out = step(spec, state(3, 3, 0), ScriptedSampler([2]))
    assert (out.bin, out.samples_used) == (2, 1)


def test_two_choice_prefers_lighter_and_breaks_ties_to_second():
    spec = ProcessSpec.two_choice()
    assert step(spec, state(1, 0), ScriptedSampler([0, 1])).bin == 1
    assert step(spec, state(1, 0), ScriptedSampler([1, 0])).bin == 1
    assert step(spec, state(1, 1), ScriptedSampler([0, 1])).bin == 1


def test_one_plus_beta_coin_selects_the_rule():
    spec = ProcessSpec.one_plus_beta(F(1, 2))
    two = step(spec, state(1, 0), ScriptedSampler([0, 1], [True]))
    one = step(spec, state(1, 0), ScriptedSampler([0], [False]))
    assert (two.bin, two.samples_used) == (1, 2)
    assert (one.bin, one.samples_used) == (0, 1)


def test_two_thinning_compares_against_round_counter():
    spec = ProcessSpec.two_thinning(Offset())
    # round 4 with n=2: threshold t/n = 2, so a bin of load 1 is accepted
    out = step(spec, LoadState((1, 1), 2, 4), ScriptedSampler([0]))
    assert out.samples_used == 1
    out = step(spec, LoadState((1, 1), 2, 2), ScriptedSampler([0, 1]))
    assert (out.bin, out.samples_used) == (1, 2)


def test_quantile_rejects_exactly_the_heaviest_ranks():
    # q = 1/2, n = 4: rank 2; loads (2, 1, 1, 0): bin 0 is above, two bins tie at 1
    spec = ProcessSpec.quantile_process(F(1, 2))
    s = state(2, 1, 1, 0)
    # tie draw 0 < rank - above = 1 -> rejected
    assert step(spec, s, ScriptedSampler([1, 0, 3])).samples_used == 2
    # tie draw 1 -> accepted; the tie draw is not a bin sample
    out = step(spec, s, ScriptedSampler([1, 1]))
    assert (out.bin, out.samples_used) == (1, 1)
    by_load = ProcessSpec.quantile_process(F(1, 2), by_load=True)
    assert step(by_load, s, ScriptedSampler([1, 3])).samples_used == 2


@pytest.mark.parametrize("text, used", [("one-choice", 1), ("twinning", 1), ("two-choice", 2)])
def test_fixed_sample_counts(text, used):
    rng = RandomSource(3)
    s = state(4, 0, 1)
    assert all(step(parse_spec(text), s, rng).samples_used == used for _ in range(50))


# ranked vectors ----------------------------------------------------------


def test_mean_thinning_vector():
    assert ranked_probability_vector(ProcessSpec.mean_thinning(), state(1, 1, 0, 0)) == [
        F(1, 8), F(1, 8), F(3, 8), F(3, 8)
    ]


def test_one_plus_beta_vector():
    assert ranked_probability_vector(ProcessSpec.one_plus_beta(F(1, 2)), state(1, 0)) == [F(3, 8), F(5, 8)]


def test_two_choice_vector():
    assert ranked_probability_vector(ProcessSpec.two_choice(), state(1, 0)) == [F(1, 4), F(3, 4)]


@pytest.mark.parametrize("spec", [ProcessSpec.one_choice(), ProcessSpec.twinning()])
def test_uniform_vectors(spec):
    assert ranked_probability_vector(spec, state(5, 0, 2, 1, 1)) == [F(1, 5)] * 5


def test_one_plus_zeta_vector_mixes_mean_thinning():
    p = ranked_probability_vector(ProcessSpec.one_plus_zeta(F(1, 2)), state(1, 1, 0, 0))
    assert p == [F(1, 2) * a + F(1, 8) for a in (F(1, 8), F(1, 8), F(3, 8), F(3, 8))]


def test_quantile_rejection_count_tie_rule():
    s = state(3, 3, 3, 0)
    assert rejection_count(ProcessSpec.quantile_process(F(1, 2)), s) == 2
    assert rejection_count(ProcessSpec.quantile_process(F(1, 2), by_load=True), s) == 3


def valid_states(text):
    # ln n vanishes at n = 1, where the two k-threshold offsets coincide
    least = 2 if text.startswith("k-relative") else 1
    return st.lists(st.integers(0, 12), min_size=least, max_size=7).map(LoadState.from_loads)


ALL_SPECS = [
    "one-choice",
    "two-choice",
    "mean-thinning",
    "twinning",
    "one-plus-beta:0.5",
    "one-plus-zeta:0.5",
    "quantile:0.5",
    "quantile:0.25:load",
    "relative-threshold:log_n",
    "two-thinning:const:1",
    "k-relative-threshold:log_n,0",
]


@pytest.mark.parametrize("text", ALL_SPECS)
@given(data=st.data())
def test_vectors_sum_to_one(text, data):
    s = data.draw(valid_states(text))
    p = ranked_probability_vector(parse_spec(text), s)
    assert len(p) == s.n
    assert sum(p) == 1
    assert all(x >= 0 for x in p)


@pytest.mark.parametrize("text", ALL_SPECS)
@given(data=st.data())
def test_float_bin_probabilities_average_tied_ranks(text, data):
    s = data.draw(valid_states(text))
    spec = parse_spec(text)
    ranked = ranked_probability_vector(spec, s)
    order = sorted(range(s.n), key=lambda i: -s.loads[i])
    per_bin = bin_probabilities(spec, np.array(s.loads), s.total_weight, s.round)
    assert per_bin.sum() == pytest.approx(1.0)
    for load in set(s.loads):
        ranks = [r for r, i in enumerate(order) if s.loads[i] == load]
        group = [per_bin[order[r]] for r in ranks]
        assert group == pytest.approx([float(sum(ranked[r] for r in ranks) / len(ranks))] * len(ranks))


def test_twinning_spec_kind():
    assert parse_spec("twinning").kind is Kind.TWINNING
