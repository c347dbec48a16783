import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import numerical_grad, rel_error
from ntc.errors import ParameterError
from ntc.tensor import (
    ConvKernel,
    GdnParams,
    PaddingMode,
    conv2d,
    conv2d_backward,
    conv_down,
    conv_down_backward,
    downsample,
    gdn_backward,
    gdn_forward,
    igdn_backward,
    igdn_forward,
    up_conv,
    up_conv_backward,
    upsample,
)


def naive_conv(x, weights, bias, mode):
    """Direct summation of a centred true convolution with border extension."""
    c_in, h, w = x.shape
    c_out, _, kh, kw = weights.shape
    rh, rw = kh // 2, kw // 2

    def sample(c, m, n):
        if mode == "zero":
            if 0 <= m < h and 0 <= n < w:
                return x[c, m, n]
            return 0.0
        # symmetric extension: x[-1] = x[0], x[h] = x[h-1]
        while not 0 <= m < h:
            m = -m - 1 if m < 0 else 2 * h - 1 - m
        while not 0 <= n < w:
            n = -n - 1 if n < 0 else 2 * w - 1 - n
        return x[c, m, n]

    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for m in range(h):
            for n in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            acc += weights[o, c, a, b] * sample(c, m - (a - rh), n - (b - rw))
                out[o, m, n] = acc
    return out


def random_gdn(rng, c):
    beta = rng.uniform(0.2, 2.0, c)
    g = rng.uniform(0.0, 0.5, (c, c))
    return GdnParams(beta, (g + g.T) / 2)


class TestConv:
    def test_pointwise_affine(self):
        k = ConvKernel(np.full((1, 1, 1, 1), 2.0), np.array([1.0]))
        out = conv2d(np.full((1, 4, 5), 3.0), k)
        np.testing.assert_array_equal(out, np.full((1, 4, 5), 7.0))

    def test_zero_kernel_gives_bias(self):
        k = ConvKernel(np.zeros((2, 3, 3, 3)), np.array([0.5, -1.5]))
        out = conv2d(np.random.default_rng(0).normal(size=(3, 6, 6)), k)
        np.testing.assert_array_equal(out[0], 0.5)
        np.testing.assert_array_equal(out[1], -1.5)

    @pytest.mark.parametrize("mode", ["mirror", "zero"])
    def test_matches_naive_oracle(self, mode):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 5, 5))
        k = ConvKernel(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
        expected = naive_conv(x, k.weights, k.bias, mode)
        assert rel_error(conv2d(x, k, mode), expected) < 1e-12

    @pytest.mark.parametrize("shape", [(1, 7, 4, 9, 9), (3, 2, 6, 5, 3), (2, 2, 2, 3, 5)])
    def test_oracle_other_shapes(self, shape):
        # kernel larger than the image exercises repeated reflection
        c_out, c_in, size, kh, kw = shape
        rng = np.random.default_rng(sum(shape))
        x = rng.normal(size=(c_in, size, size + 1))
        k = ConvKernel(rng.normal(size=(c_out, c_in, kh, kw)), rng.normal(size=c_out))
        for mode in ("mirror", "zero"):
            assert rel_error(conv2d(x, k, mode), naive_conv(x, k.weights, k.bias, mode)) < 1e-12

    def test_true_convolution_orientation(self):
        # an impulse reproduces the kernel, not its mirror image
        x = np.zeros((1, 5, 5))
        x[0, 2, 2] = 1.0
        weights = np.arange(9.0).reshape(1, 1, 3, 3)
        out = conv2d(x, ConvKernel(weights, [0.0]), "zero")
        np.testing.assert_array_equal(out[0, 1:4, 1:4], weights[0, 0])

    def test_channel_mismatch(self):
        k = ConvKernel(np.zeros((1, 2, 3, 3)), np.zeros(1))
        with pytest.raises(ParameterError):
            conv2d(np.zeros((3, 4, 4)), k)

    def test_even_kernel_rejected(self):
        k = ConvKernel(np.zeros((1, 1, 2, 2)), np.zeros(1))
        with pytest.raises(ParameterError):
            conv2d(np.zeros((1, 4, 4)), k)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 2, 8, 8))
        k = ConvKernel(rng.normal(size=(4, 2, 5, 5)), rng.normal(size=4))
        batched = conv2d(x, k)
        for i in range(3):
            np.testing.assert_allclose(batched[i], conv2d(x[i], k), rtol=1e-13, atol=1e-13)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 8, 8))
        k = ConvKernel(rng.normal(size=(3, 2, 5, 5)), rng.normal(size=3))
        assert np.array_equal(conv2d(x, k), conv2d(x.copy(), k))

    @pytest.mark.parametrize("factor", [1, 2, 4])
    def test_fused_downsample(self, factor):
        rng = np.random.default_rng(factor)
        x = rng.normal(size=(2, 16, 8))
        k = ConvKernel(rng.normal(size=(3, 2, 5, 5)), rng.normal(size=3))
        fused = conv_down(x, k, factor)
        assert rel_error(fused, downsample(conv2d(x, k), factor)) < 1e-13

    @pytest.mark.parametrize("factor", [1, 2, 4])
    def test_fused_upsample(self, factor):
        rng = np.random.default_rng(10 + factor)
        x = rng.normal(size=(2, 4, 3))
        k = ConvKernel(rng.normal(size=(3, 2, 9, 9)), rng.normal(size=3))
        fused = up_conv(x, k, factor)
        assert rel_error(fused, conv2d(upsample(x, factor), k)) < 1e-13


class TestConvBackward:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 6, 6))
        k = ConvKernel(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
        gx, gk = conv2d_backward(x, k, np.zeros((3, 6, 6)))
        assert not gx.any() and not gk.weights.any() and not gk.bias.any()

    def test_bias_grad_is_channel_sum(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 6, 6))
        k = ConvKernel(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
        g = rng.normal(size=(3, 6, 6))
        _, gk = conv2d_backward(x, k, g)
        np.testing.assert_allclose(gk.bias, g.sum(axis=(1, 2)), rtol=1e-14)

    @pytest.mark.parametrize("mode", ["mirror", "zero"])
    def test_finite_differences(self, mode):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 5, 6))
        w = rng.normal(size=(3, 2, 3, 5))
        b = rng.normal(size=3)
        g = rng.normal(size=(3, 5, 6))

        def loss():
            return float(np.sum(g * conv2d(x, ConvKernel(w, b), mode)))

        gx, gk = conv2d_backward(x, ConvKernel(w, b), g, mode)
        assert rel_error(gx, numerical_grad(loss, x)) < 1e-5
        assert rel_error(gk.weights, numerical_grad(loss, w)) < 1e-5
        assert rel_error(gk.bias, numerical_grad(loss, b)) < 1e-5

    def test_grad_out_shape_checked(self):
        k = ConvKernel(np.zeros((2, 1, 3, 3)), np.zeros(2))
        with pytest.raises(ParameterError):
            conv2d_backward(np.zeros((1, 4, 4)), k, np.zeros((2, 3, 4)))

    @pytest.mark.parametrize("which", ["down", "up"])
    def test_fused_finite_differences(self, which):
        rng = np.random.default_rng(7)
        if which == "down":
            x = rng.normal(size=(2, 8, 8))
            g = rng.normal(size=(3, 4, 4))
            fwd, bwd = conv_down, conv_down_backward
        else:
            x = rng.normal(size=(2, 3, 2))
            g = rng.normal(size=(3, 6, 4))
            fwd, bwd = up_conv, up_conv_backward
        w = rng.normal(size=(3, 2, 5, 5))
        b = rng.normal(size=3)

        def loss():
            return float(np.sum(g * fwd(x, ConvKernel(w, b), 2)))

        gx, gk = bwd(x, ConvKernel(w, b), g, 2)
        assert rel_error(gx, numerical_grad(loss, x)) < 1e-5
        assert rel_error(gk.weights, numerical_grad(loss, w)) < 1e-5


class TestResampling:
    def test_identity_factor(self):
        x = np.random.default_rng(0).normal(size=(2, 4, 4))
        np.testing.assert_array_equal(downsample(x, 1), x)
        np.testing.assert_array_equal(upsample(x, 1), x)

    def test_downsample_index_arithmetic(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        np.testing.assert_array_equal(downsample(x, 2), [[[0, 2], [8, 10]]])

    def test_upsample_zero_insertion(self):
        np.testing.assert_array_equal(upsample(np.full((1, 1, 1), 5.0), 2), [[[5, 0], [0, 0]]])

    def test_non_divisible(self):
        with pytest.raises(ParameterError):
            downsample(np.zeros((1, 5, 4)), 2)

    @pytest.mark.parametrize("factor", [1, 2, 4])
    def test_down_up_roundtrip(self, factor):
        x = np.random.default_rng(factor).normal(size=(3, 5, 7))
        assert np.array_equal(downsample(upsample(x, factor), factor), x)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4]))
    def test_adjointness(self, seed, factor):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(2, 3 * factor, 4 * factor))
        lhs = np.sum(upsample(a, factor) * b)
        rhs = np.sum(a * downsample(b, factor))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


class TestGdn:
    def test_identity_parameters(self):
        w = np.random.default_rng(0).normal(size=(3, 4, 4))
        p = GdnParams(np.ones(3), np.zeros((3, 3)))
        np.testing.assert_array_equal(gdn_forward(w, p), w)
        np.testing.assert_array_equal(igdn_forward(w, p), w)

    def test_scalar_values(self):
        p = GdnParams(np.ones(1), np.ones((1, 1)))
        x = np.full((1, 1, 1), 3.0)
        assert gdn_forward(x, p)[0, 0, 0] == pytest.approx(3 / np.sqrt(10), rel=1e-15)
        assert igdn_forward(x, p)[0, 0, 0] == pytest.approx(3 * np.sqrt(10), rel=1e-15)
        assert gdn_forward(x, p)[0, 0, 0] == pytest.approx(0.948683, abs=1e-6)
        assert igdn_forward(x, p)[0, 0, 0] == pytest.approx(9.48683, abs=1e-5)

    def test_igdn_inverts_gdn_without_coupling(self):
        rng = np.random.default_rng(1)
        beta = rng.uniform(0.5, 2, 3)
        p = GdnParams(beta, np.zeros((3, 3)))
        w = rng.normal(size=(3, 5, 5))
        np.testing.assert_allclose(igdn_forward(gdn_forward(w, p), p), w, rtol=1e-15)

    def test_sign_zero_and_magnitude(self):
        rng = np.random.default_rng(2)
        p = random_gdn(rng, 4)
        w = rng.normal(scale=3, size=(4, 6, 6))
        w[0, 0, 0] = 0.0
        u = gdn_forward(w, p)
        assert np.array_equal(np.sign(u), np.sign(w))
        assert u[0, 0, 0] == 0.0
        assert np.all(np.abs(u) <= np.abs(w) / np.sqrt(p.beta)[:, None, None] + 1e-15)

    def test_rejects_asymmetric_gamma(self):
        with pytest.raises(ParameterError):
            GdnParams(np.ones(2), np.array([[1.0, 0.1], [0.2, 1.0]]))

    def test_rejects_negative(self):
        with pytest.raises(ParameterError):
            GdnParams(-np.ones(2), np.zeros((2, 2)))

    def test_channel_mismatch(self):
        with pytest.raises(ParameterError):
            gdn_forward(np.zeros((3, 2, 2)), GdnParams(np.ones(2), np.zeros((2, 2))))


@pytest.mark.parametrize("forward,backward", [(gdn_forward, gdn_backward), (igdn_forward, igdn_backward)])
class TestGdnBackward:
    def test_identity_jacobian(self, forward, backward):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(2, 3, 3))
        g = rng.normal(size=(2, 3, 3))
        gw, _, _ = backward(w, GdnParams(np.ones(2), np.zeros((2, 2))), g)
        np.testing.assert_array_equal(gw, g)

    def test_zero_grad_out(self, forward, backward):
        rng = np.random.default_rng(4)
        p = random_gdn(rng, 3)
        gw, gb, gg = backward(rng.normal(size=(3, 2, 2)), p, np.zeros((3, 2, 2)))
        assert not gw.any() and not gb.any() and not gg.any()

    def test_finite_differences(self, forward, backward):
        rng = np.random.default_rng(5)
        c = 3
        w = rng.normal(size=(2, c, 3, 4))
        p = random_gdn(rng, c)
        g = rng.normal(size=w.shape)
        beta = p.beta.copy()
        upper = p.gamma[np.triu_indices(c)].copy()

        def loss():
            gamma = np.zeros((c, c))
            gamma[np.triu_indices(c)] = upper
            gamma = gamma + np.triu(gamma, 1).T
            return float(np.sum(g * forward(w, GdnParams(beta, gamma))))

        gw, gb, gg = backward(w, p, g)
        assert rel_error(gw, numerical_grad(loss, w)) < 1e-5
        assert rel_error(gb, numerical_grad(loss, beta)) < 1e-5
        assert rel_error(gg[np.triu_indices(c)], numerical_grad(loss, upper)) < 1e-5
        np.testing.assert_array_equal(gg, gg.T)
