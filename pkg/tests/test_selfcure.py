import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtaffect import autodiff as ad
from mtaffect import selfcure


def _weights(tape, w):
    return tape.param(np.asarray(w, dtype=float).reshape(-1, 1), "w")


def test_zero_attention_gives_half():
    tape = ad.Tape()
    feats = tape.const(np.random.default_rng(0).normal(size=(4, 5)))
    out = selfcure.importance_weights(feats, tape.const(np.zeros((5, 1))), tape.const([[0.0]]))
    np.testing.assert_array_equal(out.value, 0.5)


def test_importance_is_monotone_and_open_interval():
    tape = ad.Tape()
    scores = tape.const(np.array([[-30.0], [-1.0], [0.0], [2.0], [30.0]]))
    out = selfcure.importance_weights(scores, tape.const([[1.0]]), tape.const([[0.0]])).value.ravel()
    assert np.all(np.diff(out) > 0)
    assert np.all((out > 0) & (out < 1))


def test_apply_weighting_examples():
    tape = ad.Tape()
    logits = tape.const([[2.0, 4.0], [1.0, -3.0]])
    same = selfcure.apply_weighting(logits, tape.const([[1.0], [1.0]])).value
    np.testing.assert_array_equal(same, logits.value)
    half = selfcure.apply_weighting(logits, tape.const([[0.5], [1.0]])).value
    np.testing.assert_array_equal(half[0], [1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(1e-3, 1.0))
def test_positive_weight_preserves_argmax(row, w):
    tape = ad.Tape()
    out = selfcure.apply_weighting(tape.const([row]), tape.const([[w]])).value
    assert np.argmax(out) == np.argmax(row)


def test_split_examples():
    s = selfcure.split_high_low([0.9, 0.8, 0.2, 0.1], beta=0.5)
    assert s.alpha_high == pytest.approx(0.85) and s.alpha_low == pytest.approx(0.15)
    tie = selfcure.split_high_low([0.5] * 6)
    assert tie.alpha_high == tie.alpha_low == 0.5
    assert len(selfcure.split_high_low(np.linspace(0, 1, 10), beta=0.7).high_indices) == 7


def test_split_is_stable_on_ties():
    s = selfcure.split_high_low([0.5, 0.5, 0.5, 0.5], beta=0.5)
    assert list(s.high_indices) == [0, 1] and list(s.low_indices) == [2, 3]


def test_split_rejects_tiny_batch():
    with pytest.raises(ValueError):
        selfcure.split_high_low([0.4])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=40), st.floats(0.05, 0.95))
def test_split_partitions_batch(w, beta):
    s = selfcure.split_high_low(w, beta)
    both = np.concatenate([s.high_indices, s.low_indices])
    assert sorted(both) == list(range(len(w)))
    assert s.alpha_high >= s.alpha_low


@pytest.mark.parametrize("high,low,expected", [(0.6, 0.4, 0.0), (0.5, 0.45, 0.10), (0.3, 0.3, 0.15)])
def test_rr_loss_examples(high, low, expected):
    split = selfcure.RankSplit(np.array([0]), np.array([1]), high, low)
    assert selfcure.rr_loss_value(split, 0.15) == pytest.approx(expected, abs=1e-12)
    tape = ad.Tape()
    node = selfcure.rr_loss(_weights(tape, [high, low]), split, 0.15)
    assert node.value[0, 0] == pytest.approx(expected, abs=1e-12)


def test_rr_loss_inactive_hinge_has_zero_gradient():
    tape = ad.Tape()
    w = _weights(tape, [0.9, 0.8, 0.2, 0.1])
    split = selfcure.split_high_low(w.value, 0.5)
    g = tape.backward(selfcure.rr_loss(w, split, 0.15))["w"]
    assert not g.any()
