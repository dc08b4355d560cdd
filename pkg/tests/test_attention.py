import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import back_jump_brute, random_distribution
from stitchdec.attention import AttentionSnapshot, average_heads, back_jump_probability, detect_back_stitch
from stitchdec.errors import ContractViolation
from stitchdec.search import Hypothesis

EOS = 2


def _snapshot(weights, step=1):
    return AttentionSnapshot.from_heads(step, 1, np.atleast_2d(weights))


def test_average_identical_heads():
    np.testing.assert_allclose(average_heads(np.array([[0.5, 0.5], [0.5, 0.5]])), [0.5, 0.5])


def test_average_opposite_heads():
    np.testing.assert_allclose(average_heads(np.array([[1.0, 0.0], [0.0, 1.0]])), [0.5, 0.5])


def test_single_head_softmax():
    scores = np.array([0.0, np.log(2.0)])
    head = np.exp(scores) / np.exp(scores).sum()
    np.testing.assert_allclose(average_heads(head[None, :]), [1 / 3, 2 / 3], atol=1e-15)


def test_no_heads_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        average_heads(np.zeros((0, 3)))


def test_back_jump_one_hot_at_last_frame():
    assert back_jump_probability(np.array([0.0, 0.0, 1.0]), np.array([0.2, 0.3, 0.5])) == 0.0


def test_back_jump_all_previous_mass_ahead():
    assert back_jump_probability(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])) == 1.0


def test_back_jump_hand_value():
    current = np.array([0.5, 0.5, 0.0])
    previous = np.array([0.0, 0.5, 0.5])
    assert back_jump_brute(current, previous) == pytest.approx(0.75)
    assert back_jump_probability(current, previous) == pytest.approx(0.75, abs=1e-15)


def test_previous_attention_is_zero_padded():
    current = np.array([0.0, 1.0, 0.0, 0.0])
    assert back_jump_probability(current, np.array([0.0, 0.0, 1.0])) == 1.0
    assert back_jump_probability(current, np.array([0.0, 1.0])) == 0.0
    with pytest.raises(ContractViolation):
        back_jump_probability(np.array([1.0]), np.array([0.5, 0.5]))


def test_detect_eos_always_triggers():
    hyp = Hypothesis((1, 3, EOS), 0.0, 0.0, 0.0, _snapshot([0.0, 1.0]), _snapshot([1.0, 0.0]))
    decision = detect_back_stitch(hyp, 0.5, EOS)
    assert decision.triggered and decision.probability == 0.0


@pytest.mark.parametrize(
    "current, previous, triggered",
    [
        ([0.5, 0.5, 0.0], [0.0, 0.5, 0.5], True),  # probability 0.75
        ([0.5, 0.5], [0.0, 1.0], False),  # probability exactly 0.5
    ],
)
def test_detect_threshold_is_strict(current, previous, triggered):
    hyp = Hypothesis((1, 3, 4), 0.0, 0.0, 0.0, _snapshot(current), _snapshot(previous))
    decision = detect_back_stitch(hyp, 0.5, EOS)
    assert decision.triggered is triggered
    assert decision.triggered == (decision.probability > decision.threshold)


def test_detect_first_step_has_zero_probability():
    hyp = Hypothesis((1, 3), 0.0, 0.0, 0.0, _snapshot([1.0, 0.0]), None)
    assert detect_back_stitch(hyp, 0.5, EOS).probability == 0.0


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**32 - 1), st.booleans())
def test_back_jump_matches_brute_force(frames, seed, sparse):
    rng = np.random.default_rng(seed)
    current = random_distribution(rng, frames, sparse)
    previous = random_distribution(rng, frames, sparse)
    value = back_jump_probability(current, previous)
    assert value == pytest.approx(back_jump_brute(current, previous), abs=1e-12)
    assert 0.0 <= value <= 1.0


@given(st.integers(1, 40), st.integers(0, 39), st.integers(0, 39))
def test_forward_one_hot_moves_never_jump(frames, a, b):
    prev_peak, cur_peak = sorted((a % frames, b % frames))
    current, previous = np.zeros(frames), np.zeros(frames)
    current[cur_peak] = previous[prev_peak] = 1.0
    assert back_jump_probability(current, previous) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_average_heads_permutation_invariant(heads, frames, seed):
    rng = np.random.default_rng(seed)
    per_head = rng.dirichlet(np.ones(frames), size=heads)
    base = average_heads(per_head)
    assert base.sum() == pytest.approx(1.0)
    for order in itertools.islice(itertools.permutations(range(heads)), 6):
        np.testing.assert_allclose(average_heads(per_head[list(order)]), base, atol=1e-15)
