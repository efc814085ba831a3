"""Tensor engine tests: oracles, gradient checks, Adam, determinism."""

import math

import numpy as np
import pytest

from tailned import autodiff as ad
from tailned.autodiff import Tensor


def matmul_oracle(a, b):
    """Independent triple-loop product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def softmax_oracle(row):
    e = np.exp(np.asarray(row, dtype=np.float64))
    return e / e.sum()


class TestMatmul:
    def test_identity(self):
        a = np.array([[2.0, -1.0], [0.5, 3.0]])
        out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_small_product(self):
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        out = ad.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, matmul_oracle(a, b), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestSoftmax:
    def test_uniform(self):
        out = ad.rowwise_softmax(Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_known_row(self):
        # frozen from softmax_oracle([1, 2, 3])
        out = ad.rowwise_softmax(Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)
        np.testing.assert_allclose(out.data, softmax_oracle([1.0, 2.0, 3.0]), atol=1e-15)

    def test_large_inputs_no_overflow(self):
        out = ad.rowwise_softmax(Tensor([1000.0, 1000.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            x = rng.normal(scale=rng.uniform(0.1, 50.0), size=(4, 7))
            s = ad.rowwise_softmax(Tensor(x)).data
            np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = ad.cross_entropy(Tensor([0.0, 0.0, 0.0, 0.0]), 2)
        assert abs(loss.item() - math.log(4.0)) < 1e-12

    def test_confident_gold(self):
        loss = ad.cross_entropy(Tensor([50.0, 0.0, 0.0]), 0)
        assert loss.item() < 1e-8

    def test_matches_softmax_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            logits = rng.normal(size=6)
            gold = int(rng.integers(6))
            loss = ad.cross_entropy(Tensor(logits), gold)
            expected = -math.log(softmax_oracle(logits)[gold])
            assert abs(loss.item() - expected) < 1e-10

    def test_gold_out_of_range(self):
        with pytest.raises(ValueError):
            ad.cross_entropy(Tensor([0.0, 1.0]), 2)


class TestBackward:
    def test_sum_of_squares(self):
        x = ad.parameter([1.0, 2.0, 3.0])
        loss = ad.sum_(ad.mul(x, x))
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-12)

    def test_constant_loss_zero_grads(self):
        x = ad.parameter([1.0, 2.0])
        loss = ad.sum_(ad.mul(x, 0.0))
        ad.backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_grad_accumulates_across_calls(self):
        x = ad.parameter([2.0])
        for _ in range(2):
            ad.backward(ad.sum_(ad.mul(x, x)))
        np.testing.assert_allclose(x.grad, [8.0], atol=1e-12)

    def test_shared_subexpression(self):
        # y = (x*x) + (x*x): grad 4x
        x = ad.parameter([3.0])
        sq = ad.mul(x, x)
        ad.backward(ad.sum_(ad.add(sq, sq)))
        np.testing.assert_allclose(x.grad, [12.0], atol=1e-12)

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError):
            ad.backward(ad.parameter([1.0, 2.0]))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Tensor([np.inf, 1.0])


class TestGradChecks:
    """Every differentiable primitive passes central finite differences."""

    def run_check(self, fn, params, tol=1e-4):
        err = ad.grad_check(fn, params, eps=1e-5)
        assert err < tol, f"grad check failed: {err}"

    def test_square_scalar(self):
        params = {"x": ad.parameter([3.0])}
        err = ad.grad_check(lambda p: ad.sum_(ad.mul(p["x"], p["x"])), params)
        assert err < 1e-8

    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        params = {
            "a": ad.parameter(rng.normal(size=(3, 4))),
            "b": ad.parameter(rng.normal(size=(4,))),
        }
        self.run_check(
            lambda p: ad.sum_(ad.mul(ad.add(p["a"], p["b"]), p["a"])), params
        )

    def test_matmul_both_sides(self):
        rng = np.random.default_rng(1)
        params = {
            "a": ad.parameter(rng.normal(size=(3, 4))),
            "b": ad.parameter(rng.normal(size=(4, 2))),
        }
        self.run_check(lambda p: ad.sum_(ad.matmul(p["a"], p["b"])), params)

    def test_matmul_nd_lhs(self):
        rng = np.random.default_rng(2)
        params = {
            "a": ad.parameter(rng.normal(size=(2, 3, 4))),
            "b": ad.parameter(rng.normal(size=(4, 2))),
        }
        self.run_check(
            lambda p: ad.sum_(ad.tanh(ad.matmul(p["a"], p["b"]))), params
        )

    def test_bmm(self):
        rng = np.random.default_rng(3)
        params = {
            "a": ad.parameter(rng.normal(size=(2, 3, 4))),
            "b": ad.parameter(rng.normal(size=(2, 4, 3))),
        }
        self.run_check(lambda p: ad.sum_(ad.bmm(p["a"], p["b"])), params)

    def test_permute_reshape_concat(self):
        rng = np.random.default_rng(4)
        params = {
            "a": ad.parameter(rng.normal(size=(2, 3))),
            "b": ad.parameter(rng.normal(size=(2, 3))),
        }

        def fn(p):
            joined = ad.concat([p["a"], p["b"]], axis=-1)
            flipped = ad.permute(joined, (1, 0))
            return ad.sum_(ad.mul(ad.reshape(flipped, (12,)), 0.5))

        self.run_check(fn, params)

    def test_tanh_relu_mean(self):
        rng = np.random.default_rng(5)
        params = {"x": ad.parameter(rng.normal(size=(4, 5)) + 0.1)}
        self.run_check(
            lambda p: ad.mean(ad.relu(ad.tanh(p["x"]))), params
        )

    def test_sum_axis(self):
        rng = np.random.default_rng(6)
        params = {"x": ad.parameter(rng.normal(size=(3, 4)))}
        self.run_check(
            lambda p: ad.sum_(ad.mul(ad.sum_(p["x"], axis=1), [1.0, 2.0, 3.0])),
            params,
        )

    def test_softmax(self):
        rng = np.random.default_rng(7)
        params = {"x": ad.parameter(rng.normal(size=(3, 5)))}
        weights = rng.normal(size=(3, 5))
        self.run_check(
            lambda p: ad.sum_(ad.mul(ad.rowwise_softmax(p["x"]), weights)), params
        )

    def test_cross_entropy(self):
        rng = np.random.default_rng(8)
        params = {"x": ad.parameter(rng.normal(size=6))}
        self.run_check(lambda p: ad.cross_entropy(p["x"], 2), params)

    def test_layer_norm(self):
        rng = np.random.default_rng(9)
        params = {
            "x": ad.parameter(rng.normal(size=(3, 6))),
            "g": ad.parameter(rng.normal(size=(6,))),
            "b": ad.parameter(rng.normal(size=(6,))),
        }
        weights = rng.normal(size=(3, 6))
        self.run_check(
            lambda p: ad.sum_(ad.mul(ad.layer_norm(p["x"], p["g"], p["b"]), weights)),
            params,
        )

    def test_take_rows_scatter(self):
        rng = np.random.default_rng(10)
        params = {"table": ad.parameter(rng.normal(size=(5, 3)))}
        idx = np.array([0, 2, 2, 4])
        weights = rng.normal(size=(4, 3))
        self.run_check(
            lambda p: ad.sum_(ad.mul(ad.take_rows(p["table"], idx), weights)), params
        )

    def test_maximum(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(4, 4))
        b = a + rng.choice([-0.5, 0.5], size=(4, 4))  # keep away from ties
        params = {"a": ad.parameter(a), "b": ad.parameter(b)}
        self.run_check(lambda p: ad.sum_(ad.maximum(p["a"], p["b"])), params)

    def test_dropout_train_mode(self):
        rng = np.random.default_rng(12)
        params = {"x": ad.parameter(rng.normal(size=(4, 4)))}

        def fn(p):
            r = np.random.default_rng(99)  # same mask on every call
            return ad.sum_(ad.dropout(p["x"], 0.3, r, train=True))

        self.run_check(fn, params)

    def test_harness_flags_broken_gradient(self):
        # a deliberately wrong backward rule must be caught
        def broken_square(x):
            out = Tensor(x.data * x.data)
            out._parents = (x,)
            out._backward = lambda g, acc: acc(x, g * 1.5 * x.data)  # should be 2x
            return out

        params = {"x": ad.parameter([1.5])}
        err = ad.grad_check(lambda p: ad.sum_(broken_square(p["x"])), params)
        assert err > 1e-2


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        out = ad.dropout(x, 0.5, np.random.default_rng(0), train=False)
        assert out is x

    def test_train_mode_preserves_expectation(self):
        # inverted scaling: E[out] == input, tolerance 1% over >=1e5 draws
        rng = np.random.default_rng(42)
        x = Tensor(np.full(100_000, 2.0))
        out = ad.dropout(x, 0.1, rng, train=True)
        assert abs(out.data.mean() - 2.0) / 2.0 < 0.01

    def test_seeded_masks_reproduce(self):
        x = Tensor(np.ones(1000))
        a = ad.dropout(x, 0.4, np.random.default_rng(7), train=True)
        b = ad.dropout(x, 0.4, np.random.default_rng(7), train=True)
        np.testing.assert_array_equal(a.data, b.data)


class TestAdam:
    def test_first_step_magnitude(self):
        # bias-corrected first step is ~lr * sign(g)
        params = {"x": ad.parameter([1.0])}
        state = ad.AdamState(lr=0.1)
        ad.adam_step(params, {"x": np.array([2.0])}, state)
        np.testing.assert_allclose(params["x"].data, [0.9], atol=1e-8)

    def test_zero_gradient_no_move(self):
        params = {"x": ad.parameter([1.0])}
        state = ad.AdamState(lr=0.1)
        ad.adam_step(params, {"x": np.array([0.0])}, state)
        np.testing.assert_array_equal(params["x"].data, [1.0])

    def test_two_steps_reduce_quadratic(self):
        params = {"x": ad.parameter([3.0])}
        state = ad.AdamState(lr=0.1)
        history = []
        for _ in range(2):
            params["x"].zero_grad()
            loss = ad.sum_(ad.mul(params["x"], params["x"]))
            history.append(loss.item())
            ad.backward(loss)
            ad.adam_step(params, {"x": params["x"].grad}, state)
        final = ad.sum_(ad.mul(params["x"], params["x"])).item()
        assert final < history[0]

    def test_shape_mismatch_rejected(self):
        params = {"x": ad.parameter([1.0, 2.0])}
        with pytest.raises(ValueError):
            ad.adam_step(params, {"x": np.zeros(3)}, ad.AdamState())


class TestDeterminism:
    def test_identical_seeds_identical_losses(self):
        def run(seed):
            rng = np.random.default_rng(seed)
            x = ad.parameter(rng.normal(size=(4, 4)))
            w = ad.parameter(rng.normal(size=(4, 2)))
            drop_rng = np.random.default_rng(seed + 1)
            h = ad.dropout(ad.tanh(ad.matmul(x, w)), 0.2, drop_rng, train=True)
            loss = ad.mean(ad.mul(h, h))
            ad.backward(loss)
            return loss.item(), x.grad.copy()

        l1, g1 = run(123)
        l2, g2 = run(123)
        assert l1 == l2
        np.testing.assert_array_equal(g1, g2)
