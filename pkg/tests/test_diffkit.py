"""Tests for the tape, its primitives, Adam and the plateau schedule."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feature_graph_lab.core.diffkit import (
    AdamState,
    BatchNormState,
    ReduceOnPlateau,
    Tape,
    Tensor,
    adam_step,
    finite_difference_grad,
    relative_error,
    zero_grad,
)
from feature_graph_lab.errors import NonFiniteError, ShapeError

GRAD_TOL = 1e-6


def _check_gradients(build, tensors, h=1e-5, tol=GRAD_TOL):
    """Compare tape gradients of ``build(tape)`` with central differences."""
    zero_grad(tensors)
    tape = Tape()
    tape.backward(build(tape))
    for t in tensors:
        numeric = finite_difference_grad(lambda: build(Tape()).item(), t, h)
        assert t.grad is not None, t.name
        assert relative_error(t.grad, numeric) < tol, t.name


def _param(rng, *shape, name=None):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def _target(rng, shape):
    return Tensor(rng.normal(size=shape))


def test_matmul_add_gradients():
    rng = np.random.default_rng(0)
    a, w, b = _param(rng, 3, 4, 5, name="a"), _param(rng, 5, 2, name="w"), _param(rng, 2, name="b")
    target = _target(rng, (3, 4, 2))
    _check_gradients(lambda t: t.mse(t.add(t.matmul(a, w), b), target), [a, w, b])


def test_mul_scale_broadcast_gradients():
    rng = np.random.default_rng(1)
    a, b = _param(rng, 4, 3, name="a"), _param(rng, 1, 3, name="b")
    target = _target(rng, (4, 3))
    _check_gradients(lambda t: t.mse(t.scale(t.mul(a, b), 0.7), target), [a, b])


def test_concat_reshape_broadcast_gradients():
    rng = np.random.default_rng(2)
    a, b = _param(rng, 2, 3, 1, name="a"), _param(rng, 3, 2, name="b")
    target = _target(rng, (6, 3))

    def build(t):
        joined = t.concat([a, t.broadcast_to(b, (2, 3, 2))], axis=-1)
        return t.mse(t.reshape(joined, (6, 3)), target)

    _check_gradients(build, [a, b])


def test_mean_sum_gradients():
    rng = np.random.default_rng(3)
    a = _param(rng, 3, 4, 5, name="a")
    target = _target(rng, (3, 5))
    _check_gradients(lambda t: t.mse(t.add(t.mean(a, axis=1), t.sum(a, axis=1)), target), [a])


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(4)
    value = rng.uniform(0.2, 1.0, size=(4, 3)) * rng.choice([-1.0, 1.0], size=(4, 3))
    a = Tensor(value, requires_grad=True, name="a")
    target = _target(rng, (4, 3))
    _check_gradients(lambda t: t.mse(t.relu(a), target), [a])


def test_gather_with_repeats_gradient():
    rng = np.random.default_rng(5)
    a = _param(rng, 2, 4, 3, name="a")
    index = np.array([0, 2, 2, 3, 0])
    target = _target(rng, (2, 5, 3))
    _check_gradients(lambda t: t.mse(t.gather(a, index, axis=1), target), [a])


def test_segment_softmax_gradient():
    rng = np.random.default_rng(6)
    scores = _param(rng, 3, 6, name="scores")
    seg = np.array([0, 0, 1, 1, 1, 3])
    target = _target(rng, (3, 6))
    _check_gradients(lambda t: t.mse(t.segment_softmax(scores, seg, 4), target), [scores])


def test_segment_sum_gradient():
    rng = np.random.default_rng(7)
    messages = _param(rng, 2, 5, 3, name="messages")
    seg = np.array([0, 0, 2, 3, 3])
    target = _target(rng, (2, 4, 3))
    _check_gradients(lambda t: t.mse(t.segment_sum(messages, seg, 4), target), [messages])


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradients(training):
    rng = np.random.default_rng(8)
    x = _param(rng, 5, 3, 4, name="x")
    state = BatchNormState.create(4)
    state.gamma.value = rng.normal(size=4)
    state.beta.value = rng.normal(size=4)
    state.running_mean = rng.normal(size=4)
    state.running_var = rng.uniform(0.5, 2.0, size=4)
    target = _target(rng, (5, 3, 4))
    _check_gradients(lambda t: t.mse(t.batch_norm(x, state, training), target), [x, state.gamma, state.beta])


def test_batch_norm_training_statistics():
    """Test outputs are standardized per channel and running stats move by momentum."""
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(3.0, 2.0, size=(50, 4, 2)))
    state = BatchNormState.create(2, momentum=0.1)

    out = Tape().batch_norm(x, state, training=True).value.reshape(-1, 2)

    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-4)
    rows = x.value.reshape(-1, 2)
    np.testing.assert_allclose(state.running_mean, 0.1 * rows.mean(axis=0))
    np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * rows.var(axis=0, ddof=1))


def test_batch_norm_eval_uses_running_statistics():
    state = BatchNormState.create(2)
    state.running_mean = np.array([1.0, -1.0])
    state.running_var = np.array([4.0, 1.0])
    out = Tape().batch_norm(Tensor([[3.0, 0.0]]), state, training=False).value

    np.testing.assert_allclose(out, [[2.0 / np.sqrt(4.0 + 1e-5), 1.0 / np.sqrt(1.0 + 1e-5)]])


def test_batch_norm_single_row_in_training():
    with pytest.raises(ShapeError):
        Tape().batch_norm(Tensor([[1.0, 2.0]]), BatchNormState.create(2), training=True)


@settings(max_examples=30)
@given(st.integers(min_value=1, max_value=5), st.integers(min_value=0, max_value=2**31 - 1))
def test_segment_softmax_sums_to_one(num_segments, seed):
    """Test weights are positive and sum to one in every non-empty segment."""
    rng = np.random.default_rng(seed)
    seg = rng.integers(0, num_segments, size=8)
    scores = Tensor(rng.normal(scale=50.0, size=(3, 8)))

    weights = Tape().segment_softmax(scores, seg, num_segments).value
    assert np.all(weights > 0)
    for s in np.unique(seg):
        np.testing.assert_allclose(weights[:, seg == s].sum(axis=1), 1.0)


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_segment_ops_invariant_to_arc_order(seed):
    """Test permuting arcs permutes softmax weights and leaves segment sums unchanged."""
    rng = np.random.default_rng(seed)
    seg = rng.integers(0, 4, size=9)
    scores = rng.normal(size=(2, 9))
    messages = rng.normal(size=(2, 9, 3))
    perm = rng.permutation(9)
    tape = Tape()

    w = tape.segment_softmax(Tensor(scores), seg, 4).value
    w_perm = tape.segment_softmax(Tensor(scores[:, perm]), seg[perm], 4).value
    np.testing.assert_allclose(w_perm, w[:, perm], atol=1e-12)

    total = tape.segment_sum(Tensor(messages), seg, 4).value
    total_perm = tape.segment_sum(Tensor(messages[:, perm]), seg[perm], 4).value
    np.testing.assert_allclose(total_perm, total, atol=1e-12)


def test_segment_sum_empty_segment_is_zero():
    out = Tape().segment_sum(Tensor(np.ones((1, 2, 2))), np.array([0, 0]), 3).value
    np.testing.assert_array_equal(out[0, 1:], 0.0)
    np.testing.assert_array_equal(out[0, 0], [2.0, 2.0])


def test_backward_accumulates_shared_inputs():
    """Test a tensor used twice receives the sum of both gradients."""
    a = Tensor([2.0], requires_grad=True)
    tape = Tape()
    loss = tape.sum(tape.add(tape.mul(a, a), a), axis=0)
    tape.backward(loss)
    np.testing.assert_allclose(a.grad, [5.0])


def test_backward_skips_constants():
    a = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([3.0, 4.0])
    tape = Tape()
    tape.backward(tape.sum(tape.mul(a, c), axis=0))

    np.testing.assert_allclose(a.grad, [3.0, 4.0])
    assert c.grad is None


def test_backward_needs_scalar():
    a = Tensor([1.0, 2.0], requires_grad=True)
    tape = Tape()
    with pytest.raises(ShapeError):
        tape.backward(tape.scale(a, 2.0))


def test_non_finite_forward_raises():
    tape = Tape()
    big = Tensor([1e308])
    with pytest.raises(NonFiniteError):
        tape.mul(big, Tensor([10.0]))


@pytest.mark.parametrize(
    "op",
    [
        lambda t: t.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2)))),
        lambda t: t.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,)))),
        lambda t: t.mse(Tensor(np.ones((2, 1))), Tensor(np.ones((2,)))),
        lambda t: t.reshape(Tensor(np.ones(6)), (4, 2)),
        lambda t: t.segment_sum(Tensor(np.ones((2, 3))), np.array([0, 1, 1]), 2),
        lambda t: t.segment_softmax(Tensor(np.ones((2, 3))), np.array([0, 1]), 2),
    ],
)
def test_shape_errors(op):
    with pytest.raises(ShapeError):
        op(Tape())


def test_adam_first_step_moves_by_lr():
    """Test the bias-corrected first step is lr * sign(g)."""
    p = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    state = AdamState.for_params([p], lr=0.1)
    adam_step([p], [np.array([0.3, -4.0, 0.0])], state)

    np.testing.assert_allclose(p.value, [0.9, -1.9, 0.5], atol=1e-6)
    assert state.step == 1


def test_adam_matches_reference_two_steps():
    p = Tensor([1.0], requires_grad=True)
    state = AdamState.for_params([p], lr=0.01)
    g1, g2 = np.array([0.5]), np.array([-0.2])
    adam_step([p], [g1], state)
    adam_step([p], [g2], state)

    m = 0.9 * (0.1 * 0.5) + 0.1 * -0.2
    v = 0.999 * (0.001 * 0.25) + 0.001 * 0.04
    m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
    expected = 1.0 - 0.01 - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(p.value, [expected], rtol=1e-6)


def test_adam_missing_gradient_counts_as_zero():
    p = Tensor([1.0], requires_grad=True)
    state = AdamState.for_params([p], lr=0.1)
    adam_step([p], [None], state)
    np.testing.assert_allclose(p.value, [1.0])


def test_adam_shape_mismatch():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        adam_step([p], [np.ones(3)], AdamState.for_params([p]))


def test_adam_minimizes_quadratic():
    rng = np.random.default_rng(10)
    w = Tensor(rng.normal(size=3), requires_grad=True)
    target = Tensor(np.array([1.0, -2.0, 3.0]))
    state = AdamState.for_params([w], lr=0.1)
    for _ in range(1000):
        tape = Tape()
        zero_grad([w])
        tape.backward(tape.mse(w, target))
        adam_step([w], [w.grad], state)
    np.testing.assert_allclose(w.value, target.value, atol=1e-2)


def test_reduce_on_plateau():
    """Test the rate halves after `patience` stale epochs and never drops below min_lr."""
    state = AdamState(lr=0.01)
    schedule = ReduceOnPlateau(factor=0.5, patience=2, threshold=0.0, min_lr=0.004)

    assert schedule.step(1.0, state) is False
    assert schedule.step(1.0, state) is False
    assert schedule.step(1.0, state) is True
    assert state.lr == pytest.approx(0.005)
    schedule.step(1.0, state)
    assert schedule.step(1.0, state) is True
    assert state.lr == pytest.approx(0.004)
    schedule.step(1.0, state)
    assert schedule.step(1.0, state) is False
    assert state.lr == pytest.approx(0.004)


def test_reduce_on_plateau_resets_on_improvement():
    state = AdamState(lr=0.01)
    schedule = ReduceOnPlateau(factor=0.5, patience=2, threshold=0.0)
    for loss in (1.0, 1.0, 0.5, 0.5, 0.4):
        assert schedule.step(loss, state) is False
    assert state.lr == 0.01


def test_finite_difference_grad_of_quadratic():
    t = Tensor([1.0, -3.0])
    grad = finite_difference_grad(lambda: float(np.sum(t.value**2)), t)
    np.testing.assert_allclose(grad, [2.0, -6.0], atol=1e-8)
    np.testing.assert_array_equal(t.value, [1.0, -3.0])


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([0.0])) == 1.0
