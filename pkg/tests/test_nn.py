"""MLP and convolution blocks: construction contracts, trivial cases, and a
straight-line reimplementation oracle."""

import numpy as np
import pytest

from talkingnerf import autodiff as ad
from talkingnerf.nn import (MlpSpec, avg_pool2, conv2d, global_avg_pool,
                            init_mlp, mlp_forward, zero_last_layer)
from talkingnerf.rng import make_rng


class TestMlpSpec:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError, match="at least"):
            MlpSpec((4,), ())
        with pytest.raises(ValueError, match="activations"):
            MlpSpec((4, 3), ("relu", "relu"))
        with pytest.raises(ValueError, match="unknown activation"):
            MlpSpec((4, 3), ("gelu",))
        with pytest.raises(ValueError, match=">= 1"):
            MlpSpec((4, 0), ("relu",))

    def test_init_deterministic(self):
        spec = MlpSpec((3, 5, 2), ("relu", "none"), seed=9)
        a = init_mlp(spec)
        b = init_mlp(spec)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.data, pb.data)


class TestForward:
    def test_zero_weights_pass_bias(self):
        spec = MlpSpec((4, 3), ("none",), seed=0)
        params = init_mlp(spec)
        params[0].data[...] = 0.0
        params[1].data[...] = [1.0, -2.0, 3.0]
        x = ad.constant(make_rng(1).uniform(size=(6, 4)))
        y = mlp_forward(spec, params, x)
        np.testing.assert_array_equal(y.data, np.tile([1.0, -2.0, 3.0], (6, 1)))

    def test_identity_layer(self):
        spec = MlpSpec((3, 3), ("none",), seed=0)
        params = init_mlp(spec)
        params[0].data[...] = np.eye(3)
        params[1].data[...] = 0.0
        v = make_rng(2).uniform(size=(5, 3))
        y = mlp_forward(spec, params, ad.constant(v))
        np.testing.assert_array_equal(y.data, v)

    def test_two_layer_relu_matches_straight_line(self):
        spec = MlpSpec((3, 4, 2), ("relu", "none"), seed=42)
        params = init_mlp(spec)
        x = np.ones((1, 3))
        y = mlp_forward(spec, params, ad.constant(x))
        # independent loop-free recomputation of the same arithmetic
        w0, b0, w1, b1 = (p.data for p in params)
        h = x @ w0 + b0
        h = np.where(h > 0.0, h, 0.0)
        expect = h @ w1 + b1
        np.testing.assert_array_equal(y.data, expect)

    def test_input_width_mismatch(self):
        spec = MlpSpec((3, 2), ("none",), seed=0)
        params = init_mlp(spec)
        with pytest.raises(ValueError, match="width"):
            mlp_forward(spec, params, ad.constant(np.zeros((2, 4))))

    def test_zero_last_layer_zeroes_output(self):
        spec = MlpSpec((3, 8, 3), ("relu", "none"), seed=3)
        params = init_mlp(spec)
        zero_last_layer(params)
        x = ad.constant(make_rng(4).normal(size=(7, 3)))
        y = mlp_forward(spec, params, x)
        assert np.all(y.data == 0.0)

    def test_last_layer_override_leaves_params_untouched(self):
        spec = MlpSpec((3, 4, 2), ("relu", "none"), seed=5)
        params = init_mlp(spec)
        before = params[-2].data.copy()
        w = ad.constant(np.zeros((4, 2)))
        b = ad.constant(np.array([7.0, -7.0]))
        y = mlp_forward(spec, params, ad.constant(np.zeros((1, 3))),
                        last_layer=(w, b))
        np.testing.assert_array_equal(y.data, [[7.0, -7.0]])
        np.testing.assert_array_equal(params[-2].data, before)


class TestConv:
    def test_conv2d_matches_brute_force(self):
        rng = make_rng(6)
        x = rng.uniform(size=(5, 6, 2))
        w = rng.uniform(-0.5, 0.5, size=(3, 3, 2, 4))
        b = rng.uniform(size=(4,))
        y = conv2d(ad.constant(x), ad.constant(w), ad.constant(b)).data

        xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        expect = np.zeros((5, 6, 4))
        for r in range(5):
            for c in range(6):
                patch = xp[r:r + 3, c:c + 3, :]
                expect[r, c] = np.tensordot(patch, w, axes=3) + b
        np.testing.assert_allclose(y, expect, rtol=0, atol=1e-13)

    def test_conv2d_stride2_positions(self):
        rng = make_rng(7)
        x = rng.uniform(size=(6, 6, 1))
        w = rng.uniform(size=(3, 3, 1, 2))
        y2 = conv2d(ad.constant(x), ad.constant(w), stride=2).data
        y1 = conv2d(ad.constant(x), ad.constant(w), stride=1).data
        np.testing.assert_array_equal(y2, y1[::2, ::2])

    def test_conv2d_rejects_even_kernel(self):
        with pytest.raises(ValueError, match="odd"):
            conv2d(ad.constant(np.zeros((4, 4, 1))),
                   ad.constant(np.zeros((2, 2, 1, 1))))

    def test_conv2d_gradient(self):
        rng = make_rng(8)
        x = ad.param(rng.uniform(size=(4, 4, 2)))
        w = ad.param(rng.uniform(-0.5, 0.5, size=(3, 3, 2, 3)))
        b = ad.param(rng.uniform(size=(3,)))

        def f():
            return ad.tsum(ad.square(conv2d(x, w, b)))

        ad.zero_grads([x, w, b])
        ad.backward(f())
        for p in (x, w, b):
            flat = p.data.reshape(-1)
            for i in range(0, flat.size, max(1, flat.size // 6)):
                orig = flat[i]
                flat[i] = orig + 1e-6
                hi = float(f().data)
                flat[i] = orig - 1e-6
                lo = float(f().data)
                flat[i] = orig
                num = (hi - lo) / 2e-6
                assert abs(num - p.grad.reshape(-1)[i]) < 1e-5 * max(
                    1.0, abs(num))

    def test_pools(self):
        x = make_rng(9).uniform(size=(4, 6, 3))
        g = global_avg_pool(ad.constant(x)).data
        np.testing.assert_allclose(g, x.mean(axis=(0, 1))[None, :], atol=1e-15)
        p = avg_pool2(ad.constant(x)).data
        expect = x.reshape(2, 2, 3, 2, 3).mean(axis=(1, 3))
        np.testing.assert_allclose(p, expect, atol=1e-15)

    def test_avg_pool2_drops_odd_edge(self):
        x = make_rng(10).uniform(size=(5, 7, 1))
        p = avg_pool2(ad.constant(x)).data
        assert p.shape == (2, 3, 1)
        np.testing.assert_allclose(
            p, x[:4, :6].reshape(2, 2, 3, 2, 1).mean(axis=(1, 3)), atol=1e-15)
