import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bce_direct, conv2d_loop, correlation_loop, maxpool_loop, semantic_direct
from sscd.engine import (
    Adam,
    AdamState,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    backward,
    batch_norm2d,
    bce_change_loss,
    channel_concat,
    channel_softmax,
    conv2d,
    correlation2d,
    grad_check,
    max_pool2d,
    mul,
    relu,
    split_semantic_loss,
    sum as tsum,
    upsample2x,
)


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


class TestTape:
    def test_sum_gradient_is_ones(self):
        x = leaf(np.random.default_rng(0).standard_normal((2, 3, 4)))
        with Tape() as tape:
            loss = tsum(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_square_gradient(self):
        x = leaf([1.0, 2.0])
        with Tape():
            loss = tsum(mul(x, x))
        backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        x = leaf(np.ones(3))
        with Tape() as tape:
            y = mul(x, 2.0)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_unreachable_leaf_gets_zero_grad(self):
        x, y = leaf(np.ones(3)), leaf(np.ones(2))
        with Tape() as tape:
            tsum(y)  # y is recorded but the loss below ignores it
            loss = tsum(mul(x, 3.0))
        tape.backward(loss)
        np.testing.assert_array_equal(y.grad, np.zeros(2))
        np.testing.assert_array_equal(x.grad, np.full(3, 3.0))

    def test_replay_is_bit_identical(self):
        rng = np.random.default_rng(1)
        x = leaf(rng.standard_normal((1, 2, 4, 4)))
        w = leaf(rng.standard_normal((3, 2, 3, 3)))
        with Tape() as tape:
            loss = tsum(relu(conv2d(x, w, padding=1)))
        tape.backward(loss)
        g1 = (x.grad.copy(), w.grad.copy())
        tape.backward(loss)
        assert np.array_equal(g1[0], x.grad) and np.array_equal(g1[1], w.grad)

    def test_integer_input_is_promoted(self):
        assert Tensor(np.arange(3)).dtype == np.float64

    def test_no_tape_no_recording(self):
        x = leaf(np.ones(2))
        y = tsum(x)
        with pytest.raises(ValueError):
            backward(y)

    def test_shared_input_accumulates(self):
        x = leaf([3.0])
        with Tape() as tape:
            loss = tsum(mul(x, x) + x)
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [7.0])

    def test_clear_frees_activations_without_gc(self):
        import gc
        import weakref

        x = leaf(np.ones((4, 4)))
        gc.disable()
        try:
            with Tape() as tape:
                h = mul(x, 2.0)
                loss = tsum(relu(h))
            tape.backward(loss)
            ref = weakref.ref(h)
            tape.clear()
            del h, loss
            assert ref() is None and len(tape) == 0
        finally:
            gc.enable()
        np.testing.assert_array_equal(x.grad, np.full((4, 4), 2.0))


class TestConv2d:
    @pytest.mark.parametrize("seed", range(100))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.choice([1, 2, 3]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        h, w = rng.integers(k, 7), rng.integers(k, 7)
        x = rng.standard_normal((n, cin, h, w))
        wt = rng.standard_normal((cout, cin, k, k))
        b = rng.standard_normal(cout)
        got = conv2d(Tensor(x), Tensor(wt), Tensor(b), stride, pad).data
        np.testing.assert_allclose(got, conv2d_loop(x, wt, b, stride, pad), atol=1e-6)

    def test_channel_mismatch_names_both_shapes(self):
        x, w = Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(ShapeError, match=r"\(1, 3, 4, 4\).*\(2, 4, 3, 3\)"):
            conv2d(x, w)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    def test_float32_stays_float32(self):
        x = Tensor(np.ones((1, 2, 4, 4), np.float32))
        w = Tensor(np.ones((1, 2, 3, 3), np.float32))
        assert conv2d(x, w, padding=1).dtype == np.float32


class TestMaxPool:
    @pytest.mark.parametrize("seed", range(100))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        x = rng.standard_normal((2, 2, rng.integers(k, 8), rng.integers(k, 8)))
        np.testing.assert_allclose(max_pool2d(Tensor(x), k, stride).data, maxpool_loop(x, k, stride), atol=1e-6)

    def test_tie_routes_gradient_to_first(self):
        x = leaf(np.ones((1, 1, 2, 2)))
        with Tape() as tape:
            loss = tsum(max_pool2d(x, 2))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            max_pool2d(Tensor(np.zeros((1, 1, 2, 2))), 3)


class TestUpsample:
    def test_nearest_replicates(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        np.testing.assert_array_equal(
            upsample2x(x, "nearest").data[0, 0],
            [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]],
        )

    def test_bilinear_half_pixel_weights(self):
        # sample points at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped) between values 0 and 4
        x = Tensor(np.array([0.0, 4.0]).reshape(1, 1, 1, 2))
        np.testing.assert_allclose(upsample2x(x, "bilinear").data[0, 0, 0], [0.0, 1.0, 3.0, 4.0])

    def test_bilinear_preserves_constants(self):
        x = Tensor(np.full((1, 2, 3, 5), 0.7))
        np.testing.assert_allclose(upsample2x(x, "bilinear").data, 0.7)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            upsample2x(Tensor(np.zeros((1, 1, 2, 2))), "cubic")


class TestSoftmax:
    @settings(max_examples=50, deadline=None)
    # logit gaps beyond ~36 round p to exactly 1.0 in float64
    @given(arrays(np.float64, (2, 3, 2, 2), elements=st.floats(-15, 15)))
    def test_valid_distribution(self, z):
        p = channel_softmax(Tensor(z)).data
        assert (p > 0).all() and (p < 1).all()
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_needs_two_channels(self):
        with pytest.raises(ShapeError):
            channel_softmax(Tensor(np.zeros((1, 1, 2, 2))))


class TestCorrelation:
    def test_self_correlation_of_ones(self):
        f = Tensor(np.ones((1, 4, 3, 3)))
        out = correlation2d(f, f, 0).data
        assert out.shape == (1, 1, 3, 3)
        np.testing.assert_array_equal(out, 1.0)

    def test_zero_second_input(self):
        f1 = Tensor(np.random.default_rng(0).standard_normal((1, 3, 4, 4)))
        f2 = Tensor(np.zeros((1, 3, 4, 4)))
        np.testing.assert_array_equal(correlation2d(f1, f2, 2).data, 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        f1, f2 = rng.standard_normal((2, 2, 8, 5, 5))
        out = correlation2d(Tensor(f1), Tensor(f2), 2).data
        assert out.shape == (2, 25, 5, 5)
        np.testing.assert_allclose(out, correlation_loop(f1, f2, 2), atol=1e-6)

    def test_gradients(self):
        rng = np.random.default_rng(8)
        f1, f2 = rng.standard_normal((2, 2, 8, 5, 5))
        w = rng.standard_normal((2, 25, 5, 5))
        err = grad_check(lambda a, b: tsum(mul(correlation2d(a, b, 2), w)), [f1, f2])
        assert err < 1e-3

    def test_zero_displacement_is_mean_square(self):
        f = np.random.default_rng(9).standard_normal((1, 5, 4, 4))
        out = correlation2d(Tensor(f), Tensor(f), 0).data[:, 0]
        np.testing.assert_allclose(out, (f ** 2).mean(axis=1))
        assert (out >= 0).all()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            correlation2d(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 3, 4))), 1)


class TestChangeLoss:
    def test_uniform_logits(self):
        loss = bce_change_loss(Tensor(np.zeros((1, 2, 4, 4))), np.random.default_rng(0).integers(0, 2, (1, 4, 4)))
        assert abs(float(loss.data) - 16 * math.log(2)) < 1e-6

    def test_confident_correct_prediction(self):
        t = np.random.default_rng(1).integers(0, 2, (1, 3, 3))
        z = np.zeros((1, 2, 3, 3))
        z[:, 1] = np.where(t == 1, 20.0, -20.0)
        assert float(bce_change_loss(Tensor(z), t).data) < 1e-3

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_direct_formula(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((1, 2, 3, 3)) * 3
        t = rng.integers(0, 2, (1, 3, 3))
        assert abs(float(bce_change_loss(Tensor(z), t).data) - bce_direct(z, t)) < 1e-6

    def test_non_binary_target(self):
        with pytest.raises(ValueError):
            bce_change_loss(Tensor(np.zeros((1, 2, 2, 2))), np.full((1, 2, 2), 2))

    def test_mean_reduction(self):
        z = np.random.default_rng(2).standard_normal((2, 2, 3, 3))
        t = np.ones((2, 3, 3))
        s = float(bce_change_loss(Tensor(z), t).data)
        m = float(bce_change_loss(Tensor(z), t, reduction="mean").data)
        assert abs(s / 18 - m) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (1, 2, 2, 3), elements=st.floats(-30, 30)), st.integers(0, 63))
    def test_nonnegative(self, z, bits):
        t = np.array([(bits >> i) & 1 for i in range(6)]).reshape(1, 2, 3)
        assert float(bce_change_loss(Tensor(z), t).data) >= 0


class TestSemanticLoss:
    def test_uniform_two_classes_one_pixel(self):
        loss = split_semantic_loss(Tensor(np.zeros((1, 4, 1, 1))), np.zeros((1, 1)), np.ones((1, 1)))
        assert abs(float(loss.data) - 2 * math.log(2)) < 1e-6

    def test_peaked_logits(self):
        rng = np.random.default_rng(3)
        t1, t2 = rng.integers(0, 3, (2, 1, 2, 2))
        z = np.full((1, 6, 2, 2), -20.0)
        for y in range(2):
            for x in range(2):
                z[0, t1[0, y, x], y, x] = 20.0
                z[0, 3 + t2[0, y, x], y, x] = 20.0
        assert float(split_semantic_loss(Tensor(z), t1, t2).data) < 1e-3

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_direct_formula(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((1, 6, 2, 2)) * 2
        t1, t2 = rng.integers(0, 3, (2, 1, 2, 2))
        assert abs(float(split_semantic_loss(Tensor(z), t1, t2).data) - semantic_direct(z, t1, t2)) < 1e-6

    def test_out_of_range_class_names_pixel(self):
        t1 = np.zeros((1, 2, 2), int)
        t1[0, 1, 0] = 3
        with pytest.raises(ValueError, match=r"n=0, y=1, x=0"):
            split_semantic_loss(Tensor(np.zeros((1, 6, 2, 2))), t1, np.zeros((1, 2, 2), int))


class TestGradCheck:
    def test_linear_graph_is_exact(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        assert grad_check(lambda t: tsum(mul(t, 3.0)), [x]) < 1e-10

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0.01, 1, (4, 4)) * rng.choice([-1, 1], (4, 4))  # |x| > 10h
        w = rng.standard_normal((4, 4))
        assert grad_check(lambda t: tsum(mul(relu(t), w)), [x]) < 1e-6

    def test_relu_propagates_nan(self):
        out = relu(Tensor(np.array([np.nan, -1.0, 2.0])))
        assert np.isnan(out.data[0]) and list(out.data[1:]) == [0.0, 2.0]

    def test_conv_relu_bce_pipeline(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal(2)
        t = rng.integers(0, 2, (1, 4, 4))

        def fn(x, w, b):
            return bce_change_loss(relu(conv2d(x, w, b, padding=1)), t)

        # keep pre-activations away from the relu kink
        pre = conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1).data
        assert np.abs(pre).min() > 10 * 1e-4
        assert grad_check(fn, [x, w, b]) < 1e-3

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: tsum(t), [np.ones(2)], h=0)

    def test_catches_wrong_gradient(self):
        from sscd.engine.tensor import track

        def bad_square(t):
            return track(t.data ** 2, (t,), lambda g: (g * t.data,))  # missing factor 2

        assert grad_check(lambda t: tsum(bad_square(t)), [np.array([1.0, 2.0])]) > 0.1


class TestBatchNorm:
    def test_training_normalizes(self):
        x = np.random.default_rng(0).standard_normal((4, 3, 5, 5)) * 3 + 2
        rm, rv = np.zeros(3), np.ones(3)
        out = batch_norm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))

    def test_eval_uses_running_stats(self):
        x = np.random.default_rng(1).standard_normal((2, 2, 3, 3))
        rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
        out = batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, training=False).data
        expect = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
        np.testing.assert_allclose(out, expect)
        np.testing.assert_array_equal(rm, [1.0, -1.0])


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        adam_step(p, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])
        assert state.t == 1

    def test_first_step_is_minus_lr(self):
        # m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps)
        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([1.0])}, AdamState())
        assert abs(p["w"][0] - (-2e-4)) < 1e-6
        assert abs(p["w"][0] - (-2e-4 / (1 + 1e-8))) < 1e-15

    def test_descends_quadratic(self):
        p = {"w": np.array([1.0])}
        state = AdamState(lr=0.01)
        for _ in range(1000):
            adam_step(p, {"w": 2 * p["w"]}, state)
        assert abs(p["w"][0]) < 0.05

    def test_nan_gradient_names_parameter(self):
        p = {"enc.w": np.ones(2)}
        with pytest.raises(FloatingPointError, match="enc.w"):
            adam_step(p, {"enc.w": np.array([1.0, np.nan])}, AdamState())
        np.testing.assert_array_equal(p["enc.w"], 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState())

    def test_zero_learning_rate(self):
        t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam([("t", t)], lr=0.0)
        for _ in range(5):
            t.grad = np.array([0.3, -1.0])
            opt.step()
        np.testing.assert_array_equal(t.data, [1.0, 2.0])


def test_concat_routes_gradients():
    a, b = leaf(np.ones((1, 1, 2, 2))), leaf(np.ones((1, 2, 2, 2)))
    w = np.arange(12.0).reshape(1, 3, 2, 2)
    with Tape() as tape:
        loss = tsum(mul(channel_concat(a, b), w))
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, w[:, :1])
    np.testing.assert_array_equal(b.grad, w[:, 1:])
