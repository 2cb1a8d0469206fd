import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import softmax_mp
from pixood import scoring
from pixood.scoring import (
    ODIN_TEMPERATURES,
    boundary_suppress,
    confidence_losses,
    mutual_information,
    score_confidence,
    score_entropy,
    score_max_softmax,
    score_mutual_information,
    score_odin,
    score_varsum,
    softmax,
)


def px(*logits):
    """A 1x1 logit map."""
    return np.array(logits, dtype=np.float32).reshape(1, 1, -1)


logit_maps = hnp.arrays(
    np.float32,
    st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(2, 6)),
    elements=st.floats(-30, 30, width=32),
)
stacks = hnp.arrays(
    np.float32,
    st.tuples(st.integers(2, 5), st.integers(1, 3), st.integers(1, 3), st.integers(2, 5)),
    elements=st.floats(-20, 20, width=32),
)


def test_softmax_closed_forms():
    np.testing.assert_allclose(softmax([0, 0, 0, 0]), [0.25] * 4)
    np.testing.assert_allclose(softmax([math.log(3), 0]), [0.75, 0.25], atol=1e-12)
    np.testing.assert_allclose(softmax([1000.0, 1000.0]), [0.5, 0.5])


@given(hnp.arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50)), st.floats(-500, 500))
def test_softmax_shift_invariant(x, c):
    p = softmax(x)
    assert abs(p.sum() - 1) < 1e-6 and (p >= 0).all()
    np.testing.assert_allclose(softmax(x + c), p, atol=1e-6)


def test_max_softmax_examples():
    assert score_max_softmax(px(0, 0, 0, 0))[0, 0] == pytest.approx(0.75, abs=1e-7)
    assert score_max_softmax(px(math.log(3), 0))[0, 0] == pytest.approx(0.25, abs=1e-7)


def test_max_softmax_against_high_precision_oracle():
    rng = np.random.default_rng(3)
    logits = rng.normal(0, 4, size=(4, 5, 7)).astype(np.float32)
    got = score_max_softmax(logits)
    for y in range(4):
        for x in range(5):
            assert got[y, x] == pytest.approx(1 - max(softmax_mp(logits[y, x])), abs=1e-6)


def test_odin_examples():
    assert score_odin(px(2, 0), 2)[0, 0] == pytest.approx(1 - math.e / (math.e + 1), abs=1e-7)
    assert score_odin(px(2, 0), 2)[0, 0] == pytest.approx(0.26894, abs=1e-5)


def test_odin_large_temperature_approaches_uniform():
    rng = np.random.default_rng(4)
    logits = rng.uniform(-5, 5, size=(6, 6, 5)).astype(np.float32)
    got = score_odin(logits, 1000)
    for y in range(6):
        for x in range(6):
            oracle = 1 - max(softmax_mp(logits[y, x] / 1000.0))
            assert got[y, x] == pytest.approx(oracle, abs=1e-6)
    assert np.abs(got - (1 - 1 / 5)).max() < 1e-2


@pytest.mark.parametrize("t", [0, -1.0])
def test_odin_rejects_nonpositive_temperature(t):
    with pytest.raises(ValueError):
        score_odin(px(1, 0), t)


@given(logit_maps)
@settings(deadline=None)
def test_odin_t1_equals_max_softmax(logits):
    assert np.abs(score_odin(logits, 1) - score_max_softmax(logits)).max() <= 1e-7


def test_temperature_grid():
    assert ODIN_TEMPERATURES == (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)


def test_entropy_examples():
    assert score_entropy(px(1000, 0, 0))[0, 0] == pytest.approx(0.0, abs=1e-7)
    assert score_entropy(np.zeros((2, 2, 19), dtype=np.float32)) == pytest.approx(1.0, abs=1e-7)
    p = np.array([0.5, 0.25, 0.25])
    raw = 1.5 * math.log(2)
    assert raw == pytest.approx(1.03972, abs=1e-5)
    assert score_entropy(px(*np.log(p)))[0, 0] == pytest.approx(raw / math.log(3), abs=1e-6)


def test_entropy_of_point_mass_is_zero():
    assert scoring.entropy(np.array([1.0, 0.0, 0.0])) == 0.0


def test_varsum_examples():
    same = np.tile(np.random.default_rng(0).normal(size=(1, 2, 2, 3)).astype(np.float32), (4, 1, 1, 1))
    assert (score_varsum(same) == 0).all()
    # runs with probabilities (1, 0) and (0, 1)
    flip = np.array([[[[50.0, -50.0]]], [[[-50.0, 50.0]]]], dtype=np.float32)
    assert score_varsum(flip)[0, 0] == pytest.approx(1.0, abs=1e-7)


def test_varsum_against_two_pass_variance():
    rng = np.random.default_rng(5)
    stack = rng.normal(0, 2, size=(5, 3, 4, 6)).astype(np.float32)
    got = score_varsum(stack)
    for y in range(3):
        for x in range(4):
            probs = [softmax_mp(stack[t, y, x]) for t in range(5)]
            total = 0.0
            for k in range(6):
                col = [p[k] for p in probs]
                m = sum(col) / len(col)
                total += sum((v - m) ** 2 for v in col) / len(col)
            assert got[y, x] == pytest.approx(total / (6 / 4), abs=1e-6)


def test_varsum_rejects_single_pass_and_bad_shape():
    with pytest.raises(ValueError):
        score_varsum(np.zeros((1, 2, 2, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        score_varsum(np.zeros((2, 2, 3), dtype=np.float32))


def test_mutual_information_examples():
    same = np.tile(np.random.default_rng(1).normal(size=(1, 2, 3, 4)).astype(np.float32), (3, 1, 1, 1))
    assert (score_mutual_information(same) == 0).all()
    flip = np.array([[[[60.0, -60.0]]], [[[-60.0, 60.0]]]], dtype=np.float32)
    assert mutual_information(flip)[0, 0] == pytest.approx(math.log(2), abs=1e-9)
    assert score_mutual_information(flip)[0, 0] == pytest.approx(1.0, abs=1e-7)


@given(stacks)
@settings(deadline=None)
def test_mutual_information_nonnegative(stack):
    assert mutual_information(stack).min() >= -1e-6


@given(logit_maps, st.randoms(use_true_random=False))
@settings(deadline=None)
def test_entropy_permutation_invariant(logits, rnd):
    perm = list(range(logits.shape[-1]))
    rnd.shuffle(perm)
    np.testing.assert_allclose(score_entropy(logits[..., perm]), score_entropy(logits), atol=1e-6)


@given(stacks, st.randoms(use_true_random=False))
@settings(deadline=None)
def test_mi_permutation_invariant(stack, rnd):
    perm = list(range(stack.shape[-1]))
    rnd.shuffle(perm)
    np.testing.assert_allclose(
        score_mutual_information(stack[..., perm]), score_mutual_information(stack), atol=1e-6
    )


@given(logit_maps)
@settings(deadline=None)
def test_logit_scores_in_unit_interval(logits):
    for s in (score_max_softmax(logits), score_entropy(logits), score_odin(logits, 7.0)):
        assert s.dtype == np.float32 and s.shape == logits.shape[:2]
        assert s.min() >= 0 and s.max() <= 1
    assert score_max_softmax(logits).max() <= 1 - 1 / logits.shape[-1] + 1e-6


@given(stacks)
@settings(deadline=None)
def test_stack_scores_in_unit_interval(stack):
    for s in (score_varsum(stack), score_mutual_information(stack)):
        assert s.shape == stack.shape[1:3]
        assert s.min() >= 0 and s.max() <= 1


def test_confidence_score():
    c = np.array([[1.0, 0.0, 0.3]], dtype=np.float32)
    np.testing.assert_allclose(score_confidence(c), [[0.0, 1.0, 0.7]], atol=1e-7)
    with pytest.raises(ValueError):
        score_confidence(np.array([[1.2]], dtype=np.float32))


# -- confidence losses --------------------------------------------------------------


def test_losses_reduce_at_full_confidence():
    rng = np.random.default_rng(2)
    p = softmax(rng.normal(size=(10, 4)))
    y = np.eye(4)[rng.integers(0, 4, 10)]
    for b in (np.zeros(10), np.ones(10)):
        l_t, l_c, total = confidence_losses(p, y, np.ones(10), b)
        assert l_c == 0
        assert total == l_t
        # c' = 1 so p' = p
        assert l_t == pytest.approx(np.mean(-np.log((p * y).sum(-1))), abs=1e-12)


def test_bernoulli_zero_disables_hint():
    p = np.array([[0.9, 0.1]])
    y = np.array([[0.0, 1.0]])
    l_t, _, _ = confidence_losses(p, y, np.array([0.2]), np.array([0.0]))
    assert l_t == pytest.approx(-math.log(0.1))
    # with b = 1 the hint mixes in the truth: p' = 0.2 p + 0.8 y
    l_t1, l_c1, total = confidence_losses(p, y, np.array([0.2]), np.array([1.0]))
    assert l_t1 == pytest.approx(-math.log(0.2 * 0.1 + 0.8))
    assert total == pytest.approx(l_t1 + 0.5 * -math.log(0.2))


def test_loss_hand_value():
    _, _, total = confidence_losses(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]), np.array([1.0]), np.array([1.0]), lam=0.5)
    assert total == pytest.approx(0.69315, abs=1e-5)


def test_zero_confidence_is_domain_error():
    with pytest.raises(ValueError):
        confidence_losses(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]), np.array([0.0]), np.array([1.0]))


# -- boundary suppression -----------------------------------------------------------


def test_boundary_radius_zero_is_identity():
    s = np.random.default_rng(0).random((4, 4)).astype(np.float32)
    np.testing.assert_array_equal(boundary_suppress(s, np.zeros((4, 4), int), 0), s)


def test_boundary_uniform_prediction_is_identity():
    s = np.random.default_rng(0).random((5, 5)).astype(np.float32)
    np.testing.assert_array_equal(boundary_suppress(s, np.full((5, 5), 3), 2), s)


def test_boundary_hand_example():
    s = np.array([[0.1, 0.9, 0.9, 0.1]], dtype=np.float32)
    pred = np.array([[0, 0, 1, 1]])
    np.testing.assert_allclose(boundary_suppress(s, pred, 1), [[0.1, 0.1, 0.1, 0.1]])


@given(
    hnp.arrays(np.float32, (6, 7), elements=st.floats(0, 1, width=32)),
    hnp.arrays(np.int64, (6, 7), elements=st.integers(0, 2)),
    st.integers(0, 3),
)
@settings(deadline=None)
def test_boundary_never_increases(s, pred, r):
    assert (boundary_suppress(s, pred, r) <= s).all()
