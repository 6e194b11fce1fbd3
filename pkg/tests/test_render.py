"""Ray sampling and volume integration against closed-form transmittance
oracles: homogeneous media, partition of unity, monotone transmittance,
quadrature convergence, and frame assembly."""

import numpy as np
import pytest

from talkingnerf import autodiff as ad
from talkingnerf.gradcheck import grad_check
from talkingnerf.render import (Camera, composite_background, integrate,
                                make_rays, ray_box_bounds, render_frame,
                                sample_ray)
from talkingnerf.rng import make_rng

IDENT = np.eye(4)


def reconstruct_transmittance(weights, t_end):
    """T_i from emitted weights by telescoping: w_j = T_j - T_{j+1}."""
    suffix = np.cumsum(weights[:, ::-1], axis=1)[:, ::-1]
    return suffix + t_end[:, None]


class TestSampleRay:
    def test_midpoints_unjittered(self):
        t, delta = sample_ray(np.zeros(1), np.ones(1), 4)
        np.testing.assert_allclose(t[0], [0.125, 0.375, 0.625, 0.875], atol=0)
        np.testing.assert_allclose(delta[0], [0.25, 0.25, 0.25, 0.125], atol=0)

    def test_deltas_telescope_to_span(self):
        t_near = np.array([0.5, 1.25])
        t_far = np.array([2.0, 3.45])
        t, delta = sample_ray(t_near, t_far, 17, jitter_seed=(3, 4))
        np.testing.assert_allclose(delta.sum(axis=1), t_far - t[:, 0],
                                   rtol=0, atol=1e-15)
        assert np.all(delta >= 0.0)

    def test_jitter_stays_in_bins(self):
        t, _ = sample_ray(np.zeros(3), np.ones(3), 8, jitter_seed=(9,))
        edges = np.arange(9) / 8.0
        for i in range(8):
            assert np.all(t[:, i] >= edges[i]) and np.all(t[:, i] <= edges[i + 1])

    def test_jitter_determinism(self):
        a = sample_ray(np.zeros(2), np.ones(2), 6, jitter_seed=(9,))[0]
        b = sample_ray(np.zeros(2), np.ones(2), 6, jitter_seed=(9,))[0]
        c = sample_ray(np.zeros(2), np.ones(2), 6, jitter_seed=(10,))[0]
        np.testing.assert_array_equal(a, b)
        assert np.any(a != c)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError, match="at least 2"):
            sample_ray(np.zeros(1), np.ones(1), 1)


class TestIntegrateOracles:
    def _run(self, sigma, color, t, delta, t_far=None):
        if t_far is None:
            t_far = np.full(t.shape[0], t[0, -1] + delta[0, -1])
        return integrate(ad.constant(sigma), ad.constant(color), t, delta, t_far)

    def test_homogeneous_medium_closed_form(self):
        # sigma = 2 over [0, 1], 256 left-endpoint samples covering the whole
        # interval: the discretization is exact for a homogeneous medium
        n = 256
        t = (np.arange(n) / n)[None, :]
        delta = np.full((1, n), 1.0 / n)
        c0 = np.array([0.2, 0.5, 0.8])
        out = self._run(np.full((1, n), 2.0), np.tile(c0, (1, n, 1)), t, delta)
        expect = c0 * (1.0 - np.exp(-2.0))
        np.testing.assert_allclose(out["C"].data[0], expect, rtol=0, atol=1e-4)
        np.testing.assert_allclose(out["alpha"].data[0], 1.0 - np.exp(-2.0),
                                   rtol=0, atol=1e-12)

    def test_homogeneous_medium_with_sampler(self):
        # midpoint samples start at t_1 = 1/(2n); exact value for the covered
        # stretch is c0 * (1 - e^{-sigma (t_far - t_1)})
        n = 256
        t, delta = sample_ray(np.zeros(1), np.ones(1), n)
        c0 = np.array([1.0, 1.0, 1.0])
        out = self._run(np.full((1, n), 2.0), np.tile(c0, (1, n, 1)), t, delta)
        expect = 1.0 - np.exp(-2.0 * (1.0 - t[0, 0]))
        np.testing.assert_allclose(out["C"].data[0], expect, rtol=0, atol=1e-12)

    def test_partition_of_unity_random_rays(self):
        rng = make_rng(80)
        r, s = 1000, 16
        sigma = np.abs(rng.normal(size=(r, s))) * 3.0
        delta = rng.uniform(0.01, 0.2, size=(r, s))
        t = np.cumsum(delta, axis=1)
        color = rng.uniform(size=(r, s, 3))
        out = self._run(sigma, color, t, delta,
                        t_far=t[:, -1] + delta[:, -1])
        total = out["weights"].data.sum(axis=1) + out["T_end"].data
        np.testing.assert_allclose(total, 1.0, rtol=0, atol=1e-12)

    def test_transmittance_monotone_on_1000_rays(self):
        rng = make_rng(81)
        r, s = 1000, 24
        sigma = np.abs(rng.normal(size=(r, s))) * 5.0
        delta = rng.uniform(0.005, 0.1, size=(r, s))
        t = np.cumsum(delta, axis=1)
        out = self._run(sigma, rng.uniform(size=(r, s, 3)), t, delta,
                        t_far=t[:, -1] + delta[:, -1])
        trans = reconstruct_transmittance(out["weights"].data, out["T_end"].data)
        assert np.all(np.diff(trans, axis=1) <= 1e-15)
        assert np.all(trans <= 1.0 + 1e-12) and np.all(trans >= 0.0)

    def test_vacuum(self):
        t, delta = sample_ray(np.zeros(1), np.ones(1), 8)
        out = self._run(np.zeros((1, 8)), np.ones((1, 8, 3)), t, delta,
                        t_far=np.array([1.0]))
        assert np.all(out["C"].data == 0.0)
        assert out["alpha"].data[0] == 0.0
        assert out["T_end"].data[0] == 1.0
        assert out["depth"].data[0] == 1.0  # empty rays report t_far

    def test_opaque_wall_saturates(self):
        n = 16
        t, delta = sample_ray(np.zeros(1), np.ones(1), n)
        c0 = np.array([0.3, 0.6, 0.9])
        out = self._run(np.full((1, n), 1e4), np.tile(c0, (1, n, 1)), t, delta)
        assert abs(out["alpha"].data[0] - 1.0) < 1e-15
        np.testing.assert_allclose(out["C"].data[0], c0, rtol=0, atol=1e-15)
        # nearly all weight on the first sample -> depth at the first sample
        np.testing.assert_allclose(out["depth"].data[0], t[0, 0], atol=1e-12)

    def test_depth_localizes_thin_wall(self):
        n = 32
        t, delta = sample_ray(np.zeros(1), np.ones(1), n)
        sigma = np.zeros((1, n))
        sigma[0, 20] = 1e6
        out = self._run(sigma, np.ones((1, n, 3)), t, delta)
        np.testing.assert_allclose(out["depth"].data[0], t[0, 20], atol=1e-9)

    def test_negative_delta_rejected(self):
        t = np.array([[0.1, 0.2]])
        delta = np.array([[0.1, -0.05]])
        with pytest.raises(ValueError, match="negative"):
            integrate(ad.constant(np.ones((1, 2))),
                      ad.constant(np.ones((1, 2, 3))), t, delta, np.array([0.2]))

    def test_quadrature_error_shrinks_with_samples(self):
        # sigma(t) = t over [0, 1]: T(s) = exp(-s^2/2),
        # C = integral T sigma dt = 1 - e^{-1/2}
        target = 1.0 - np.exp(-0.5)

        def quad_err(n):
            t, delta = sample_ray(np.zeros(1), np.ones(1), n)
            out = self._run(t.copy(), np.ones((1, n, 3)), t, delta)
            return abs(out["C"].data[0, 0] - target)

        e16, e128 = quad_err(16), quad_err(128)
        assert e128 < e16 / 4.0

    def test_gradients_match_finite_differences(self):
        rng = make_rng(82)
        r, s = 2, 5
        sigma = ad.param(rng.uniform(0.5, 2.0, size=(r, s)))
        color = ad.param(rng.uniform(0.1, 0.9, size=(r, s, 3)))
        t, delta = sample_ray(np.zeros(r), np.ones(r), s)
        probe_c = ad.constant(rng.normal(size=(r, 3)))
        probe_w = ad.constant(rng.normal(size=(r, s)))

        def loss():
            out = integrate(sigma, color, t, delta, np.ones(r))
            return ad.add(
                ad.tsum(ad.mul(out["C"], probe_c)),
                ad.add(ad.tsum(ad.mul(out["weights"], probe_w)),
                       ad.add(ad.tsum(out["depth"]), ad.tsum(out["T_end"]))),
            )

        report = grad_check(loss, {"sigma": sigma, "color": color},
                            step=1e-6, floor=1e-6, elements_per_param=8)
        assert report.max_deviation < 1e-5, str(report)


class TestRays:
    def test_principal_ray_points_down_z(self):
        cam = Camera(fx=50.0, fy=50.0, cx=1.5, cy=1.5, c2w=IDENT)
        rays = make_rays(cam, 3, 3, (-1.1,) * 3, (1.1,) * 3)
        np.testing.assert_allclose(rays.dirs[4], [0.0, 0.0, -1.0], atol=1e-15)
        np.testing.assert_allclose(np.linalg.norm(rays.dirs, axis=1), 1.0,
                                   atol=1e-15)
        np.testing.assert_array_equal(rays.origins, np.zeros((9, 3)))

    def test_image_orientation(self):
        # pixel rows grow downward: the top row's rays tilt toward +y
        cam = Camera(fx=10.0, fy=10.0, cx=2.0, cy=2.0, c2w=IDENT)
        rays = make_rays(cam, 4, 4, (-2.0,) * 3, (2.0,) * 3)
        top = rays.dirs[:4]
        bottom = rays.dirs[-4:]
        assert np.all(top[:, 1] > 0.0) and np.all(bottom[:, 1] < 0.0)
        left = rays.dirs[::4]
        assert np.all(left[:, 0] < 0.0)

    def test_box_bounds_head_on(self):
        o = np.array([[0.0, 0.0, 2.35]])
        d = np.array([[0.0, 0.0, -1.0]])
        t0, t1, ok = ray_box_bounds(o, d, (-1.1,) * 3, (1.1,) * 3)
        assert ok[0]
        np.testing.assert_allclose(t0[0], 1.25, atol=1e-12)
        np.testing.assert_allclose(t1[0], 3.45, atol=1e-12)

    def test_box_behind_camera_is_miss(self):
        o = np.array([[0.0, 0.0, 2.35]])
        d = np.array([[0.0, 0.0, 1.0]])
        _, _, ok = ray_box_bounds(o, d, (-1.1,) * 3, (1.1,) * 3)
        assert not ok[0]

    def test_axis_parallel_ray_inside_slab(self):
        o = np.array([[0.5, 0.5, 0.0]])
        d = np.array([[0.0, 0.0, -1.0]])
        t0, t1, ok = ray_box_bounds(o, d, (-1.0,) * 3, (1.0,) * 3)
        assert ok[0] and t1[0] > t0[0]

    def test_camera_json_round_trip(self):
        c2w = np.array(IDENT)
        c2w[:3, 3] = [0.1, -0.2, 2.0]
        cam = Camera(fx=90.0, fy=91.0, cx=32.0, cy=31.5, c2w=c2w)
        back = Camera.from_json(cam.to_json())
        assert back.fx == cam.fx and back.cy == cam.cy
        np.testing.assert_array_equal(back.c2w, cam.c2w)

    def test_camera_rejects_bad_pose(self):
        with pytest.raises(ValueError, match="4x4"):
            Camera(fx=1.0, fy=1.0, cx=0.0, cy=0.0, c2w=np.eye(3))


class TestCompositeAndFrame:
    def test_background_closed_form(self):
        c = ad.constant(np.array([[0.2, 0.2, 0.2]]))
        a = ad.constant(np.array([0.25]))
        out = composite_background(c, a, (0.4, 0.8, 0.0))
        np.testing.assert_allclose(out.data[0], [0.5, 0.8, 0.2], atol=1e-15)

    @staticmethod
    def _camera(width, height):
        c2w = np.array(IDENT)
        c2w[2, 3] = 2.35
        f = 1.4 * max(width, height)
        return Camera(fx=f, fy=f, cx=width / 2, cy=height / 2, c2w=c2w)

    def test_zero_density_field_renders_background(self):
        def field(pts, dirs):
            n = pts.shape[0]
            return (ad.constant(np.zeros((n, 1))),
                    ad.constant(np.ones((n, 3))), {})

        img, alpha, depth, _ = render_frame(
            field, self._camera(8, 8), 8, 8, (-1.1,) * 3, (1.1,) * 3,
            bg_color=(0.5, 0.25, 0.75), n_samples=4)
        np.testing.assert_allclose(img, np.broadcast_to([0.5, 0.25, 0.75],
                                                        (8, 8, 3)), atol=1e-15)
        assert np.all(alpha == 0.0)
        assert np.all(depth > 1.0)  # t_far everywhere

    def test_render_deterministic_and_chunk_invariant(self):
        def field(pts, dirs):
            n = pts.shape[0]
            sigma = np.abs(pts[:, :1]) * 2.0
            color = 0.5 + 0.4 * np.sin(pts * 3.0)
            return ad.constant(sigma), ad.constant(color), {}

        args = (field, self._camera(6, 5), 6, 5, (-1.1,) * 3, (1.1,) * 3)
        kw = dict(bg_color=(0.5, 0.5, 0.5), n_samples=6)
        a = render_frame(*args, **kw)
        b = render_frame(*args, **kw)
        c = render_frame(*args, **kw, chunk_rays=7)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[0], c[0])
        np.testing.assert_array_equal(a[2], c[2])

    def test_render_jitter_seed_contract(self):
        def field(pts, dirs):
            return (ad.constant(np.full((pts.shape[0], 1), 0.8)),
                    ad.constant(np.abs(np.sin(pts * 2.0))), {})

        args = (field, self._camera(5, 5), 5, 5, (-1.1,) * 3, (1.1,) * 3)
        kw = dict(bg_color=(0.0, 0.0, 0.0), n_samples=5)
        a = render_frame(*args, **kw, jitter_seed=(1, 2))
        b = render_frame(*args, **kw, jitter_seed=(1, 2))
        c = render_frame(*args, **kw, jitter_seed=(1, 3))
        np.testing.assert_array_equal(a[0], b[0])
        assert np.any(a[0] != c[0])

    def test_aux_of_ones_reproduces_alpha(self):
        def field(pts, dirs):
            n = pts.shape[0]
            sigma = np.exp(-8.0 * (pts ** 2).sum(axis=1, keepdims=True)) * 4.0
            return (ad.constant(sigma), ad.constant(np.full((n, 3), 0.7)),
                    {"heat": ad.constant(np.ones((n, 1)))})

        img, alpha, _, aux = render_frame(
            field, self._camera(6, 6), 6, 6, (-1.1,) * 3, (1.1,) * 3,
            bg_color=(0.0, 0.0, 0.0), n_samples=24, want_aux=True)
        assert set(aux) == {"heat"}
        np.testing.assert_allclose(aux["heat"], alpha, rtol=0, atol=1e-12)
        assert alpha.max() > 0.1
