import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conv2d_naive, maxpool_naive, strided_conv2x2_naive, upconv_scatter_naive
from skyrmseg import tensor_core as tc
from skyrmseg.errors import ConfigError, InternalError, ShapeError


def kernel(rng, o, c, k, dtype=np.float32):
    return tc.ConvKernel(rng.standard_normal((o, c, k, k)).astype(dtype),
                         rng.standard_normal(o).astype(dtype))


class TestConv2d:
    def test_zero_kernel_gives_zero(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 6, 5)).astype(np.float32)
        k = tc.ConvKernel(np.zeros((4, 3, 3, 3), np.float32), np.zeros(4, np.float32))
        assert not tc.conv2d_forward(x, k).any()

    def test_identity_kernel(self):
        x = np.random.default_rng(1).standard_normal((1, 1, 7, 4)).astype(np.float32)
        w = np.zeros((1, 1, 3, 3), np.float32)
        w[0, 0, 1, 1] = 1
        out = tc.conv2d_forward(x, tc.ConvKernel(w, np.zeros(1, np.float32)))
        np.testing.assert_array_equal(out, x)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
        k = kernel(rng, 3, 2, 3)
        np.testing.assert_allclose(tc.conv2d_forward(x, k), conv2d_naive(x, k.weight, k.bias, 1),
                                   rtol=1e-5, atol=1e-5)

    def test_valid_padding_and_1x1(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 2, 6, 7)).astype(np.float64)
        k3 = kernel(rng, 2, 2, 3, np.float64)
        k1 = kernel(rng, 3, 2, 1, np.float64)
        np.testing.assert_allclose(tc.conv2d_forward(x, k3, "valid"),
                                   conv2d_naive(x, k3.weight, k3.bias, 0), rtol=1e-12)
        np.testing.assert_allclose(tc.conv2d_forward(x, k1),
                                   conv2d_naive(x, k1.weight, k1.bias, 0), rtol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(h=st.integers(1, 9), w=st.integers(1, 9))
    def test_same_padding_preserves_dims(self, h, w):
        x = np.ones((1, 2, h, w), np.float32)
        k = tc.ConvKernel(np.ones((3, 2, 3, 3), np.float32), np.zeros(3, np.float32))
        assert tc.conv2d_forward(x, k).shape == (1, 3, h, w)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tc.conv2d_forward(np.zeros((1, 2, 4, 4), np.float32),
                              tc.ConvKernel(np.zeros((1, 3, 3, 3)), np.zeros(1)))

    def test_empty_tensor(self):
        with pytest.raises(ShapeError):
            tc.conv2d_forward(np.zeros((0, 1, 4, 4), np.float32),
                              tc.ConvKernel(np.zeros((1, 1, 3, 3)), np.zeros(1)))

    def test_bias_length_checked(self):
        with pytest.raises(ShapeError):
            tc.ConvKernel(np.zeros((2, 1, 3, 3)), np.zeros(3))

    def test_backward_zero_grad(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        k = kernel(rng, 3, 2, 3)
        gx, gk = tc.conv2d_backward(x, k, np.zeros((1, 3, 4, 4), np.float32))
        assert not gx.any() and not gk.weight.any() and not gk.bias.any()

    def test_backward_scalar_chain_rule(self):
        x = np.array([[[[1.5]]]], np.float32)
        k = tc.ConvKernel(np.array([[[[-2.0]]]], np.float32), np.array([0.3], np.float32))
        g = np.array([[[[0.7]]]], np.float32)
        gx, gk = tc.conv2d_backward(x, k, g)
        assert gk.weight[0, 0, 0, 0] == pytest.approx(1.5 * 0.7)
        assert gx[0, 0, 0, 0] == pytest.approx(-2.0 * 0.7)
        assert gk.bias[0] == pytest.approx(0.7)

    def test_backward_shape_mismatch(self):
        x = np.zeros((1, 1, 4, 4), np.float32)
        k = tc.ConvKernel(np.zeros((2, 1, 3, 3), np.float32), np.zeros(2, np.float32))
        with pytest.raises(ShapeError):
            tc.conv2d_backward(x, k, np.zeros((1, 2, 3, 3), np.float32))


class TestMaxPool:
    def test_constant(self):
        out, _ = tc.maxpool2x2_forward(np.full((1, 2, 6, 4), 7.0, np.float32))
        assert out.shape == (1, 2, 3, 2) and np.all(out == 7.0)

    def test_single_window(self):
        out, idx = tc.maxpool2x2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert out[0, 0, 0, 0] == 4.0 and idx[0, 0, 0, 0] == 3

    def test_matches_naive(self):
        x = np.random.default_rng(5).standard_normal((1, 3, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(tc.maxpool2x2_forward(x)[0], maxpool_naive(x))

    def test_odd_dims(self):
        with pytest.raises(ShapeError):
            tc.maxpool2x2_forward(np.zeros((1, 1, 5, 4), np.float32))

    def test_backward_routes_to_argmax(self):
        x = np.random.default_rng(6).standard_normal((2, 2, 4, 6))
        _, idx = tc.maxpool2x2_forward(x)
        g = tc.maxpool2x2_backward(idx, np.ones((2, 2, 2, 3)))
        win = g.reshape(2, 2, 2, 2, 3, 2)
        assert np.all(win.sum(axis=(3, 5)) == 1)
        assert np.all(g[g != 0] == x[g != 0] * 0 + 1)
        assert np.array_equal(g != 0, x == np.repeat(np.repeat(maxpool_naive(x), 2, 2), 2, 3))

    def test_backward_zero(self):
        _, idx = tc.maxpool2x2_forward(np.random.default_rng(0).standard_normal((1, 1, 4, 4)))
        assert not tc.maxpool2x2_backward(idx, np.zeros((1, 1, 2, 2))).any()

    def test_tie_goes_top_left(self):
        _, idx = tc.maxpool2x2_forward(np.ones((1, 1, 2, 2)))
        g = tc.maxpool2x2_backward(idx, np.array([[[[5.0]]]]))
        np.testing.assert_array_equal(g[0, 0], [[5.0, 0.0], [0.0, 0.0]])

    def test_bad_index(self):
        with pytest.raises(InternalError):
            tc.maxpool2x2_backward(np.full((1, 1, 1, 1), 4, np.uint8), np.ones((1, 1, 1, 1)))


class TestUpConv:
    def test_single_pixel_ones_kernel(self):
        x = np.array([[[[2.5]]]], np.float32)
        k = tc.ConvKernel(np.ones((1, 1, 2, 2), np.float32), np.zeros(1, np.float32))
        np.testing.assert_array_equal(tc.upconv2x2_forward(x, k), np.full((1, 1, 2, 2), 2.5))

    def test_doubles_dims(self):
        rng = np.random.default_rng(7)
        out = tc.upconv2x2_forward(rng.standard_normal((2, 3, 3, 5)).astype(np.float32),
                                   kernel(rng, 4, 3, 2))
        assert out.shape == (2, 4, 6, 10)

    def test_matches_scatter(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        k = kernel(rng, 3, 2, 2)
        np.testing.assert_allclose(tc.upconv2x2_forward(x, k),
                                   upconv_scatter_naive(x, k.weight, k.bias), rtol=1e-5, atol=1e-5)

    def test_backward_zero(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 2, 2, 2))
        gx, gk = tc.upconv2x2_backward(x, kernel(rng, 3, 2, 2, np.float64), np.zeros((1, 3, 4, 4)))
        assert not gx.any() and not gk.weight.any() and not gk.bias.any()

    def test_grad_input_is_strided_conv(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 2, 3, 2))
        k = kernel(rng, 3, 2, 2, np.float64)
        g = rng.standard_normal((1, 3, 6, 4))
        gx, _ = tc.upconv2x2_backward(x, k, g)
        np.testing.assert_allclose(gx, strided_conv2x2_naive(g, k.weight), rtol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_adjoint_dot_product(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 4, 3))
        y = rng.standard_normal((2, 5, 8, 6))
        w = rng.standard_normal((5, 3, 2, 2))
        ax = tc.upconv2x2_forward(x, tc.ConvKernel(w, np.zeros(5)))
        aty = strided_conv2x2_naive(y, w)
        lhs, rhs = np.vdot(ax, y), np.vdot(x, aty)
        assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tc.upconv2x2_forward(np.zeros((1, 2, 2, 2)), tc.ConvKernel(np.zeros((1, 3, 2, 2)), np.zeros(1)))


class TestActivations:
    def test_relu(self):
        out = tc.activation_apply(np.array([-1.0, 2.0]), tc.ActivationKind("relu"))
        np.testing.assert_array_equal(out, [0.0, 2.0])

    def test_mish_values(self):
        out = tc.activation_apply(np.array([0.0, 1.0]), tc.ActivationKind("mish"))
        assert out[0] == 0.0
        assert out[1] == pytest.approx(0.86509, abs=1e-4)

    def test_prelu_and_tanh(self):
        x = np.array([-2.0, 3.0])
        np.testing.assert_allclose(tc.activation_apply(x, tc.ActivationKind("prelu", 0.25)), [-0.5, 3.0])
        np.testing.assert_allclose(tc.activation_apply(x, tc.ActivationKind("tanh")), np.tanh(x))

    def test_unknown(self):
        with pytest.raises(ConfigError):
            tc.ActivationKind("swish")

    @pytest.mark.parametrize("name", ["relu", "prelu", "tanh", "mish"])
    def test_backward_matches_central_difference(self, name):
        kind = tc.ActivationKind(name, 0.25)
        x = np.random.default_rng(1).uniform(-3, 3, 50)
        x = x[np.abs(x) > 0.05]
        g = np.random.default_rng(2).standard_normal(x.shape)
        eps = 1e-6
        numeric = (tc.activation_forward(x + eps, kind) - tc.activation_forward(x - eps, kind)) / (2 * eps)
        np.testing.assert_allclose(tc.activation_apply(x, kind, "backward", g), numeric * g,
                                   rtol=1e-6, atol=1e-9)

    def test_prelu_slope_grad(self):
        x = np.array([-2.0, 1.0, -0.5])
        g = np.array([1.0, 4.0, 2.0])
        assert tc.prelu_slope_grad(x, g) == pytest.approx(-2.0 - 1.0)


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.random.default_rng(0).standard_normal((1, 2, 3, 3)).astype(np.float32)
        for mode in ("train", "infer"):
            out, _ = tc.dropout_apply(x, 0.0, mode, 1)
            np.testing.assert_array_equal(out, x)

    def test_infer_identity(self):
        x = np.random.default_rng(0).standard_normal((1, 2, 3, 3)).astype(np.float32)
        out, mask = tc.dropout_apply(x, 0.7, "infer", 1)
        assert out is x and mask is None

    def test_expectation(self):
        x = np.ones((1, 1, 100, 1000), np.float32)
        out, mask = tc.dropout_apply(x, 0.5, "train", 3)
        assert abs(out.mean() - 1.0) < 0.01
        assert set(np.unique(out)) <= {0.0, 2.0}
        np.testing.assert_array_equal(tc.dropout_backward(mask, x), out)

    def test_invalid_rate(self):
        with pytest.raises(ConfigError):
            tc.dropout_apply(np.ones((1, 1, 1, 1)), 1.0, "train", 0)


class TestConcatSoftmax:
    def test_concat_shape_and_roundtrip(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((1, 2, 4, 4))
        b = rng.standard_normal((1, 3, 4, 4))
        c = tc.concat_channels(a, b)
        assert c.shape == (1, 5, 4, 4)
        a2, b2 = tc.split_channels(c, 2)
        np.testing.assert_array_equal(a2, a)
        np.testing.assert_array_equal(b2, b)

    def test_concat_backward_partitions_grad(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal((2, 1, 3, 3))
        g = rng.standard_normal((2, 3, 3, 3))
        # d/da of sum(g * concat(a, b)) is g[:, :2]
        ga, gb = tc.split_channels(g, a.shape[1])
        np.testing.assert_array_equal(ga, g[:, :2])
        np.testing.assert_array_equal(gb, g[:, 2:])
        assert np.vdot(g, tc.concat_channels(a, b)) == pytest.approx(np.vdot(ga, a) + np.vdot(gb, b))

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            tc.concat_channels(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 3)))

    def test_softmax_uniform(self):
        p = tc.softmax_channelwise(np.zeros((1, 3, 1, 1)))
        np.testing.assert_allclose(p[0, :, 0, 0], [1 / 3] * 3)

    def test_softmax_values(self):
        p = tc.softmax_channelwise(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1))
        np.testing.assert_allclose(p.ravel(), [0.0900, 0.2447, 0.6652], atol=1e-4)

    @settings(max_examples=30, deadline=None)
    @given(shift=st.floats(-50, 50), seed=st.integers(0, 1000))
    def test_softmax_shift_invariance_and_sum(self, shift, seed):
        z = np.random.default_rng(seed).standard_normal((2, 3, 4, 4)) * 5
        p = tc.softmax_channelwise(z)
        np.testing.assert_allclose(tc.softmax_channelwise(z + shift), p, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((p > 0) & (p < 1))

    def test_softmax_large_logits_finite(self):
        p = tc.softmax_channelwise(np.array([1000.0, -1000.0]).reshape(1, 2, 1, 1).astype(np.float32))
        assert np.all(np.isfinite(p))
