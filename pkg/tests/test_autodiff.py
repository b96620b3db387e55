"""Unit tests for the reverse-mode engine."""

import numpy as np
import pytest

from titan import autodiff as ad
from gradcheck import check_gradients


def test_sum_gradient_is_ones():
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0, 3.0], requires_grad=True)
    loss = ad.reduce_sum(x)
    grads = ad.backward(tape, loss)
    np.testing.assert_array_equal(ad.grad_of(grads, x), [1.0, 1.0, 1.0])


def test_square_gradient():
    tape = ad.Tape()
    x = tape.leaf(2.0, requires_grad=True)
    loss = x * x
    grads = ad.backward(tape, loss)
    assert float(ad.grad_of(grads, x)) == 4.0


def test_fanout_accumulates():
    tape = ad.Tape()
    x = tape.leaf(3.0, requires_grad=True)
    loss = x * x + x + x
    grads = ad.backward(tape, loss)
    assert float(ad.grad_of(grads, x)) == pytest.approx(8.0)


def test_untouched_leaf_gets_zeros():
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0], requires_grad=True)
    y = tape.leaf([5.0], requires_grad=True)
    loss = ad.reduce_sum(x)
    grads = ad.backward(tape, loss)
    np.testing.assert_array_equal(ad.grad_of(grads, y), [0.0])


def test_backward_twice_is_an_error():
    tape = ad.Tape()
    x = tape.leaf(1.0, requires_grad=True)
    loss = x * x
    ad.backward(tape, loss)
    with pytest.raises(ValueError):
        ad.backward(tape, loss)


def test_non_scalar_loss_rejected():
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(tape, x * x)


def test_cross_tape_mixing_rejected():
    t1, t2 = ad.Tape(), ad.Tape()
    x = t1.leaf(1.0, requires_grad=True)
    y = t2.leaf(2.0, requires_grad=True)
    with pytest.raises(ValueError):
        _ = x * y


def test_two_layer_perceptron_matches_finite_differences():
    rng = np.random.default_rng(7)
    params = {
        "w1": rng.normal(size=(5, 8)),
        "b1": rng.normal(size=(8,)),
        "w2": rng.normal(size=(8, 3)),
        "b2": rng.normal(size=(3,)),
    }
    x = rng.normal(size=(4, 5))
    t = rng.normal(size=(4, 3))

    def build(p):
        h = ad.relu(ad.matmul(ad.Tensor(x), p["w1"]) + p["b1"])
        y = ad.matmul(h, p["w2"]) + p["b2"]
        return ad.reduce_sum((y - ad.Tensor(t)) ** 2)

    worst = check_gradients(build, params, rng, n_coords=60)
    assert worst < 1e-4


def test_each_primitive_against_finite_differences():
    # one composite touching every differentiable primitive at least once
    rng = np.random.default_rng(21)
    params = {
        "a": rng.uniform(0.5, 2.0, size=(3, 4)),
        "b": rng.uniform(0.5, 2.0, size=(3, 4)),
        "m": rng.normal(size=(2, 4, 5)),
        "v": rng.normal(size=(3, 4)),
    }

    def build(p):
        a, b = p["a"], p["b"]
        parts = [
            ad.reduce_sum(a + b),
            ad.reduce_sum(a - b),
            ad.reduce_sum(a * b),
            ad.reduce_sum(a / b),
            ad.reduce_sum(-a),
            ad.reduce_sum(a ** 1.7),
            ad.reduce_sum(ad.exp(-a)),
            ad.reduce_sum(ad.log(b)),
            ad.reduce_sum(ad.absolute(a - 1.2)),
            ad.reduce_sum(ad.relu(a - 1.1)),
            ad.reduce_sum(ad.sigmoid(p["v"])),
            ad.reduce_sum(ad.softplus(p["v"] * 3.0)),
            ad.reduce_sum(ad.maximum(a, b * 0.9)),
            ad.reduce_sum(ad.minimum(a, b * 1.1)),
            ad.reduce_sum(ad.clip(p["v"], -0.4, 0.4) ** 2),
            ad.reduce_sum(ad.matmul(p["m"].transpose((0, 2, 1)), ad.reshape(p["v"], (1, 4, 3)))),
            ad.reduce_mean(ad.softmax(p["v"], axis=-1) * 7.0),
            ad.reduce_sum(ad.layer_norm(p["m"]) * 0.3),
            ad.reduce_sum(ad.concat([a, b], axis=1) * 0.5),
            ad.reduce_sum(ad.stack([a, b], axis=0) ** 2),
            ad.reduce_sum(p["m"][:, 1:3, ::2]),
            ad.reduce_mean(a, axis=0).sum(),
        ]
        total = parts[0]
        for term in parts[1:]:
            total = total + term
        return total

    worst = check_gradients(build, params, rng, n_coords=80)
    assert worst < 1e-4


def test_grad_reverse_forward_identity_and_sign_flip():
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0], requires_grad=True)
    y = ad.grad_reverse(x, 1.0)
    np.testing.assert_array_equal(y.data, [1.0, 2.0])
    loss = ad.reduce_sum(y * ad.Tensor([3.0, -1.0]))
    grads = ad.backward(tape, loss)
    np.testing.assert_array_equal(ad.grad_of(grads, x), [-3.0, 1.0])


def test_grad_reverse_lambda_zero_annihilates():
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0], requires_grad=True)
    loss = ad.reduce_sum(ad.grad_reverse(x, 0.0) * 5.0)
    grads = ad.backward(tape, loss)
    np.testing.assert_array_equal(ad.grad_of(grads, x), [0.0, 0.0])


def test_grad_reverse_twice_restores_gradient_exactly():
    up = np.array([3.0, -1.5, 0.25])
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0, 3.0], requires_grad=True)
    once = ad.reduce_sum(x * ad.Tensor(up))
    g_plain = ad.backward(tape, once)[x.node_id].data

    tape2 = ad.Tape()
    x2 = tape2.leaf([1.0, 2.0, 3.0], requires_grad=True)
    twice = ad.reduce_sum(ad.grad_reverse(ad.grad_reverse(x2, 1.0), 1.0) * ad.Tensor(up))
    g_double = ad.backward(tape2, twice)[x2.node_id].data
    np.testing.assert_array_equal(g_plain, g_double)


def test_grad_reverse_rejects_negative_strength():
    with pytest.raises(ValueError):
        ad.grad_reverse(ad.Tensor([1.0]), -0.5)


def test_dropout_eval_and_p_zero_are_identity():
    x = ad.Tensor(np.arange(12.0).reshape(3, 4))
    assert ad.dropout(x, 0.5, "eval", 0) is x
    assert ad.dropout(x, 0.0, "train", 0) is x


def test_dropout_rejects_bad_rate_and_mode():
    x = ad.Tensor([1.0])
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, "train", 0)
    with pytest.raises(ValueError):
        ad.dropout(x, -0.1, "train", 0)
    with pytest.raises(ValueError):
        ad.dropout(x, 0.5, "training", 0)


def test_dropout_inverted_scaling_preserves_mean():
    x = ad.Tensor(np.ones(100_000))
    out = ad.dropout(x, 0.5, "train", np.random.default_rng(3))
    assert abs(out.data.mean() - 1.0) < 0.01
    kept = out.data[out.data != 0.0]
    np.testing.assert_allclose(kept, 2.0)


def test_dropout_deterministic_given_seed():
    x = ad.Tensor(np.ones(256))
    a = ad.dropout(x, 0.3, "train", 11).data
    b = ad.dropout(x, 0.3, "train", 11).data
    np.testing.assert_array_equal(a, b)


def test_dropout_gradient_uses_same_mask():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(6, 7))
    tape = ad.Tape()
    x = tape.leaf(x0, requires_grad=True)
    out = ad.dropout(x, 0.4, "train", 99)
    loss = ad.reduce_sum(out)
    grads = ad.backward(tape, loss)
    mask_scale = np.where(out.data != 0.0, 1.0 / 0.6, 0.0)
    np.testing.assert_allclose(ad.grad_of(grads, x), mask_scale)


def test_gradient_shapes_match_values():
    rng = np.random.default_rng(13)
    tape = ad.Tape()
    leaves = {
        "a": tape.leaf(rng.normal(size=(2, 3, 4)), requires_grad=True),
        "b": tape.leaf(rng.normal(size=(4,)), requires_grad=True),
    }
    loss = ad.reduce_sum(leaves["a"] * leaves["b"])
    grads = ad.backward(tape, loss)
    for t in leaves.values():
        assert ad.grad_of(grads, t).shape == t.data.shape


def test_backward_deterministic_for_fixed_inputs():
    rng = np.random.default_rng(17)
    x0 = rng.normal(size=(5, 5))

    def run():
        tape = ad.Tape()
        x = tape.leaf(x0, requires_grad=True)
        loss = ad.reduce_sum(ad.softmax(ad.matmul(x, x), axis=-1) * ad.sigmoid(x))
        return ad.grad_of(ad.backward(tape, loss), x)

    np.testing.assert_array_equal(run(), run())
