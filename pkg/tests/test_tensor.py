import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evpk.nn import tensor as T
from evpk.nn import (
    AdamState,
    OptimizerError,
    ShapeError,
    Tensor,
    adam_step,
    cosine_lr,
    gradcheck,
    load_checkpoint,
    save_checkpoint,
)
from evpk.nn.layers import BatchNorm, Parameter


def leaf(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


# -- oracles -----------------------------------------------------------------

def matmul_loops(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv2d_loops(x, w, b, stride, pad):
    h, wd, cin = x.shape
    k, _, _, cout = w.shape
    xp = np.zeros((h + 2 * pad, wd + 2 * pad, cin))
    xp[pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((ho, wo, cout))
    for oy in range(ho):
        for ox in range(wo):
            for co in range(cout):
                s = b[co]
                for i in range(k):
                    for j in range(k):
                        for ci in range(cin):
                            s += xp[oy * stride + i, ox * stride + j, ci] * w[i, j, ci, co]
                out[oy, ox, co] = s
    return out


# -- matmul / pointwise ------------------------------------------------------

class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(np.eye(2))).data, a)

    def test_scalar_case(self):
        assert T.matmul(Tensor([[2.0]]), Tensor([[3.0]])).data[0, 0] == 6.0

    def test_against_triple_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 4))
        assert np.abs(T.matmul(Tensor(a), Tensor(b)).data - matmul_loops(a, b)).max() < 1e-12

    def test_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_backward_formulas(self):
        rng = np.random.default_rng(2)
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        T.backward(T.tsum(T.matmul(a, b) * g))
        np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-14)
        np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-14)


class TestPointwise:
    def test_identity_weights(self):
        x = np.random.default_rng(0).normal(size=(4, 5, 3))
        out = T.pointwise_conv(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input_gives_bias(self):
        b = np.array([0.5, -1.0])
        out = T.pointwise_conv(Tensor(np.zeros((3, 3, 4))), Tensor(np.ones((4, 2))), Tensor(b))
        np.testing.assert_array_equal(out.data, np.broadcast_to(b, (3, 3, 2)))

    def test_equals_reshaped_matmul(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.normal(size=(6, 7, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)
        out = T.pointwise_conv(Tensor(x), Tensor(w), Tensor(b)).data
        ref = (x.reshape(-1, 5) @ w + b).reshape(6, 7, 3)
        np.testing.assert_array_equal(out, ref)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.pointwise_conv(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


# -- batchnorm -----------------------------------------------------------------

class TestBatchnorm:
    def test_constant_input_train(self):
        bn = BatchNorm(3)
        out = bn(Tensor(np.full((10, 3), 7.0)), training=True)
        assert np.abs(out.data).max() < 1e-3

    def test_train_statistics(self):
        x = np.random.default_rng(4).normal(3.0, 2.0, size=(128, 4))
        out = BatchNorm(4)(Tensor(x), training=True).data
        assert np.all(np.abs(out.mean(axis=0)) < 1e-6)
        assert np.all(np.abs(out.var(axis=0) - 1.0) < 1e-3)

    def test_gamma_beta_statistics(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(64, 3))
        gamma, beta = Tensor(np.array([2.0, 0.5, 1.5])), Tensor(np.array([1.0, -1.0, 0.0]))
        out = T.batchnorm(Tensor(x), gamma, beta, True).data
        assert np.all(np.abs(out.mean(axis=0) - beta.data) < 1e-6)
        assert np.all(np.abs(out.var(axis=0) - gamma.data ** 2) < 1e-3)

    def test_eval_identity_stats(self):
        x = np.random.default_rng(6).normal(size=(5, 2))
        out = T.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), False,
                          np.zeros(2), np.ones(2))
        # the eps term alone scales by 1/sqrt(1 + 1e-5), so compare relatively
        assert np.abs(out.data - x).max() <= 1e-5 * np.abs(x).max()

    def test_eval_before_stats(self):
        with pytest.raises(RuntimeError):
            BatchNorm(2)(Tensor(np.zeros((3, 2))), training=False)

    def test_running_stats_update_and_small_batch_skip(self):
        bn = BatchNorm(1)
        bn(Tensor(np.array([[1.0], [3.0]])), training=True)
        assert bn.buffer("running_mean")[0] == pytest.approx(0.2)
        assert bn.buffer("running_var")[0] == pytest.approx(0.9 + 0.1 * 2.0)
        before = bn.buffer("running_mean").copy()
        bn(Tensor(np.array([[10.0]])), training=True)
        np.testing.assert_array_equal(bn.buffer("running_mean"), before)


# -- activations / reductions ------------------------------------------------

class TestActivations:
    def test_values(self):
        assert T.relu(Tensor([-3.0, 3.0])).data.tolist() == [0.0, 3.0]
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
        assert T.tanh(Tensor([0.0])).data[0] == 0.0

    def test_relu_subgradient_zero(self):
        x = leaf([0.0, 1.0])
        T.backward(T.tsum(T.relu(x)))
        assert x.grad.tolist() == [0.0, 1.0]

    @pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh"])
    def test_gradients_central_difference(self, kind):
        rng = np.random.default_rng(7)
        x = rng.uniform(-3, 3, size=50)
        x = x[np.abs(x) > 1e-3]
        t = leaf(x)
        rep = gradcheck(lambda a: T.tsum(T.activation(a, kind) * np.linspace(0.5, 1.5, len(x))), [t])
        assert rep.max_rel_err < 1e-6

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            T.activation(Tensor([1.0]), "gelu")


class TestMaxReduce:
    def test_simple_and_gradient(self):
        x = leaf([1.0, 5.0, 3.0])
        out, idx = T.max_reduce(x, axis=0)
        assert out.data == 5.0 and idx == 1
        T.backward(out)
        assert x.grad.tolist() == [0.0, 1.0, 0.0]

    def test_tie_lowest_index(self):
        _, idx = T.max_reduce(Tensor([2.0, 2.0]), axis=0)
        assert idx == 0

    def test_against_loop(self):
        x = np.random.default_rng(8).normal(size=(3, 4, 5, 2))
        out, _ = T.max_reduce(Tensor(x), axis=2)
        ref = np.zeros((3, 4, 2))
        for i, j, k in np.ndindex(3, 4, 2):
            ref[i, j, k] = max(x[i, j, t, k] for t in range(5))
        np.testing.assert_array_equal(out.data, ref)

    def test_empty_axis(self):
        with pytest.raises(ValueError):
            T.max_reduce(Tensor(np.zeros((2, 0))), axis=1)


# -- conv2d ------------------------------------------------------------------

class TestConv2d:
    def test_delta_kernel_identity(self):
        x = np.random.default_rng(9).normal(size=(6, 5, 1))
        w = np.zeros((3, 3, 1, 1))
        w[1, 1, 0, 0] = 1.0
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), stride=1, padding=1)
        np.testing.assert_array_equal(out.data, x)

    def test_ones_kernel_interior(self):
        c = 1.7
        out = T.conv2d(Tensor(np.full((5, 5, 1), c)), Tensor(np.ones((3, 3, 1, 1))), padding=1)
        assert out.data[2, 2, 0] == pytest.approx(9 * c, abs=1e-12)

    @pytest.mark.parametrize("stride,pad,hw", [(1, 1, (6, 5)), (2, 1, (7, 8)), (1, 0, (5, 5)), (2, 2, (6, 6))])
    def test_against_loops(self, stride, pad, hw):
        rng = np.random.default_rng(10 + stride + pad)
        x = rng.normal(size=hw + (3,))
        w = rng.normal(size=(3, 3, 3, 2))
        b = rng.normal(size=2)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad)
        ref = conv2d_loops(x, w, b, stride, pad)
        assert out.shape == ref.shape
        assert np.abs(out.data - ref).max() < 1e-10

    def test_output_extent(self):
        out = T.conv2d(Tensor(np.zeros((9, 7, 1))), Tensor(np.zeros((3, 3, 1, 1))), stride=2, padding=1)
        assert out.shape == ((9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1, 1)

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((5, 5, 1, 1))))


# -- softmax / cosine ------------------------------------------------------------

class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor(np.full((2, 4), 3.0)), axis=1).data
        np.testing.assert_allclose(out, 0.25, atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=st.floats(-1e4, 1e4)))
    def test_rows_positive_and_normalized(self, x):
        out = T.softmax(Tensor(x), axis=1).data
        assert np.all(out >= 0) and np.all(np.isfinite(out))
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12

    def test_strictly_positive_moderate_range(self):
        x = np.random.default_rng(11).uniform(-300, 300, size=(4, 8))
        assert np.all(T.softmax(Tensor(x), axis=1).data > 0)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (2, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_shift_invariance(self, x, c):
        a = T.softmax(Tensor(x), axis=1).data
        b = T.softmax(Tensor(x + c), axis=1).data
        assert np.abs(a - b).max() < 1e-12


class TestCosine:
    def test_cases(self):
        a = np.array([1.0, 2.0, -3.0])
        assert T.cosine_similarity(Tensor(a), Tensor(a)).item() == pytest.approx(1.0, abs=1e-12)
        assert T.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 2.0])).item() == 0.0
        assert T.cosine_similarity(Tensor(a), Tensor(-a)).item() == pytest.approx(-1.0, abs=1e-12)

    def test_zero_vector_guard(self):
        assert T.cosine_similarity(Tensor(np.zeros(3)), Tensor([1.0, 2.0, 3.0])).item() == 0.0

    def test_gradient(self):
        rng = np.random.default_rng(12)
        a, b = leaf(rng.normal(size=6)), leaf(rng.normal(size=6))
        assert gradcheck(lambda u, v: T.cosine_similarity(u, v), [a, b]).max_rel_err < 1e-6


# -- backward ------------------------------------------------------------------

class TestBackward:
    def test_sum(self):
        x = leaf(np.random.default_rng(0).normal(size=(3, 2)))
        T.backward(T.tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

    def test_sum_of_squares(self):
        x = leaf(np.random.default_rng(1).normal(size=5))
        T.backward(T.tsum(x * x))
        np.testing.assert_allclose(x.grad, 2 * x.data, atol=1e-15)

    def test_non_scalar_loss(self):
        with pytest.raises(ShapeError):
            T.backward(leaf(np.zeros(3)) * 2.0)

    def test_unused_parameter_gets_no_gradient_flow(self):
        used, unused = Parameter(np.ones(2)), Parameter(np.ones(2))
        T.backward(T.tsum(used * 3.0))
        assert unused.grad is None
        # the optimizer treats a missing gradient as zero
        state = AdamState(lr=0.1)
        adam_step([unused], state)
        np.testing.assert_array_equal(unused.data, np.ones(2))

    def test_composite_conv_bn_relu(self):
        rng = np.random.default_rng(13)
        x = leaf(rng.normal(size=(5, 5, 2)))
        w = leaf(rng.normal(size=(3, 3, 2, 3)))
        # a conv bias ahead of train-mode BN has an exactly zero gradient, so it is held fixed
        b = Tensor(rng.normal(size=3))
        gamma, beta = leaf(rng.uniform(0.5, 1.5, 3)), leaf(rng.normal(size=3))
        proj = rng.normal(size=(5, 5, 3))

        def fn(x, w, gamma, beta):
            y = T.batchnorm(T.conv2d(x, w, b, padding=1), gamma, beta, True)
            return T.tsum(T.relu(y) * proj)

        assert gradcheck(fn, [x, w, gamma, beta]).max_rel_err < 1e-4

    def test_shared_node_accumulates(self):
        x = leaf([2.0])
        y = x * 3.0
        T.backward(T.tsum(y * y + y))
        assert x.grad[0] == pytest.approx(2 * 9 * 2.0 + 3.0)

    def test_forward_determinism(self):
        def run():
            rng = np.random.default_rng(5)
            x = Tensor(rng.normal(size=(6, 6, 2)))
            w = Tensor(rng.normal(size=(3, 3, 2, 4)))
            return T.softmax(T.conv2d(x, w, padding=1), axis=-1).data

        np.testing.assert_array_equal(run(), run())


# -- optimizer -------------------------------------------------------------------

def adam_reference(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta


class TestAdam:
    def test_zero_gradient(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        adam_step([p], AdamState(lr=0.1))
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_magnitude(self):
        p = Parameter(np.zeros(4))
        p.grad = np.ones(4)
        adam_step([p], AdamState(lr=2e-4))
        np.testing.assert_allclose(np.abs(p.data), 2e-4, atol=1e-6)

    def test_ten_steps_match_recurrence(self):
        rng = np.random.default_rng(14)
        theta0 = rng.normal(size=3)
        grads = rng.normal(size=(10, 3))
        p = Parameter(theta0.copy())
        state = AdamState(lr=0.01)
        for g in grads:
            p.grad = g
            adam_step([p], state)
        ref = [adam_reference(theta0[i], grads[:, i], 0.01) for i in range(3)]
        assert np.abs(p.data - ref).max() < 1e-10

    def test_nan_gradient_names_parameter(self):
        p = Parameter(np.zeros(2), name="head.weight")
        p.grad = np.array([0.0, np.nan])
        with pytest.raises(OptimizerError, match="head.weight"):
            adam_step([p], AdamState())


class TestCosineLR:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 1e-3, 1e-5) == pytest.approx(1e-3)
        assert cosine_lr(100, 100, 1e-3, 1e-5) == pytest.approx(1e-5)
        assert cosine_lr(50, 100, 1e-3, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2)

    def test_clamp_past_end(self):
        assert cosine_lr(150, 100, 1e-3, 1e-5) == 1e-5


# -- gradcheck / checkpoint ----------------------------------------------------

class TestGradcheck:
    def test_linear_map_exact(self):
        w = np.random.default_rng(15).normal(size=(4, 3))
        x = leaf(np.random.default_rng(16).normal(size=4))
        rep = gradcheck(lambda a: T.tsum(T.matmul(T.reshape(a, (1, 4)), Tensor(w))), [x])
        assert rep.max_rel_err < 1e-9

    def test_pointwise_layer(self):
        rng = np.random.default_rng(17)
        x, w, b = leaf(rng.normal(size=(3, 4, 5))), leaf(rng.normal(size=(5, 2))), leaf(rng.normal(size=2))
        proj = rng.normal(size=(3, 4, 2))
        rep = gradcheck(lambda x, w, b: T.tsum(T.pointwise_conv(x, w, b) * proj), [x, w, b])
        assert rep.max_rel_err < 1e-6

    def test_report_flags_wrong_gradient(self):
        x = leaf([1.0, 2.0])

        def broken(a):
            out = T.tsum(a * a)
            return T._make(out.data, (a,), lambda g: (np.zeros(2),))

        assert gradcheck(broken, [x]).max_rel_err > 0.5


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(18)
    arrays_ = {"a.weight": rng.normal(size=(3, 3, 2, 4)), "b": np.array(np.pi), "c.bias": rng.normal(size=7),
               "lrm.scale0.h": rng.normal(size=(4, 4, 2)).astype(np.float32)}
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, arrays_)
    back = load_checkpoint(path)
    assert list(back) == list(arrays_)
    for k in arrays_:
        assert back[k].shape == np.shape(arrays_[k])
        assert back[k].tobytes() == np.asarray(arrays_[k], dtype="<f8").tobytes()
