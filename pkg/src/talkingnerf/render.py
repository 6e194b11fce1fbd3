"""Ray generation, stratified sampling, and volume integration.

The quadrature is the standard exponential-transmittance discretization:
alpha_i = 1 - exp(-sigma_i * delta_i), T_i = exp(-sum_{j<i} sigma_j delta_j),
pixel color = sum_i T_i alpha_i c_i.  Transmittance comes from an exclusive
cumulative sum so the weights telescope and sum to 1 - T_end exactly up to
rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import make_rng

DEPTH_EPS = 1e-8


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus camera-to-world pose.

    The camera looks along its local -z axis; +x is right, +y is up in the
    image (pixel rows grow downward).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    c2w: np.ndarray  # (4, 4)

    def __post_init__(self):
        c2w = np.asarray(self.c2w, dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError(f"c2w must be 4x4, got {c2w.shape}")
        object.__setattr__(self, "c2w", c2w)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "c2w": self.c2w.tolist()}

    @staticmethod
    def from_json(obj: dict) -> "Camera":
        return Camera(obj["fx"], obj["fy"], obj["cx"], obj["cy"],
                      np.asarray(obj["c2w"], dtype=np.float64))


@dataclass
class RayBatch:
    """Vectorized rays: unit directions, per-ray integration bounds."""

    origins: np.ndarray  # (R, 3)
    dirs: np.ndarray  # (R, 3) unit
    t_near: np.ndarray  # (R,)
    t_far: np.ndarray  # (R,)
    valid: np.ndarray  # (R,) bool, False where the ray misses the scene box

    def __len__(self):
        return self.origins.shape[0]


def make_rays(camera: Camera, width: int, height: int,
              box_min, box_max) -> RayBatch:
    """One ray through each pixel center, bounded by the scene box."""
    u = (np.arange(width) + 0.5 - camera.cx) / camera.fx
    v = (np.arange(height) + 0.5 - camera.cy) / camera.fy
    uu, vv = np.meshgrid(u, v)  # (H, W)
    d_cam = np.stack([uu, -vv, -np.ones_like(uu)], axis=-1).reshape(-1, 3)
    d_world = d_cam @ camera.c2w[:3, :3].T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.c2w[:3, 3], d_world.shape).copy()
    t0, t1, valid = ray_box_bounds(origins, d_world, box_min, box_max)
    return RayBatch(origins, d_world, t0, t1, valid)


def ray_box_bounds(origins, dirs, box_min, box_max, t_floor: float = 1e-3):
    """Slab intersection with an axis-aligned box; returns (t_near, t_far, hit)."""
    box_min = np.asarray(box_min, dtype=np.float64)
    box_max = np.asarray(box_max, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (box_min - origins) * inv
        tb = (box_max - origins) * inv
    lo = np.minimum(ta, tb)
    hi = np.maximum(ta, tb)
    # axis-parallel rays: +-inf slabs resolve correctly through min/max
    lo = np.where(np.isnan(lo), -np.inf, lo)
    hi = np.where(np.isnan(hi), np.inf, hi)
    t0 = np.maximum(lo.max(axis=1), t_floor)
    t1 = hi.min(axis=1)
    valid = t1 > t0
    t0 = np.where(valid, t0, t_floor)
    t1 = np.where(valid, t1, t_floor * 2)
    return t0, t1, valid


def sample_ray(t_near, t_far, n_samples: int, jitter_seed=None):
    """Stratified distances and forward differences per ray.

    One sample per equal bin of [t_near, t_far]: the bin midpoint when
    ``jitter_seed`` is None, else uniform within its bin from a counter-based
    generator keyed by the seed tuple.  delta_i = t_{i+1} - t_i with the last
    delta reaching t_far, so deltas sum to t_far - t_1.
    """
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples per ray, got {n_samples}")
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    n_rays = t_near.shape[0]
    if jitter_seed is None:
        u = np.full((n_rays, n_samples), 0.5)
    else:
        key = jitter_seed if isinstance(jitter_seed, tuple) else (jitter_seed,)
        u = make_rng(*key).uniform(size=(n_rays, n_samples))
    span = (t_far - t_near)[:, None]
    t = t_near[:, None] + span * (np.arange(n_samples) + u) / n_samples
    delta = np.diff(t, axis=1, append=t_far[:, None])
    return t, delta


def integrate(sigma: Tensor, color: Tensor, t: np.ndarray, delta: np.ndarray,
              t_far: np.ndarray):
    """Quadrature over per-ray samples.

    ``sigma``: (R, S) non-negative densities, ``color``: (R, S, 3),
    ``t``/``delta``: (R, S) sample distances and spacings.  Returns a dict of
    differentiable tensors: color ``C`` (R, 3), opacity ``alpha`` (R,),
    ``depth`` (R,), sample ``weights`` (R, S), and residual transmittance
    ``T_end`` (R,).  Empty rays (alpha exactly 0) report depth t_far.
    """
    if np.any(delta < 0.0):
        raise ValueError("negative sample spacing delta")
    r, s = sigma.shape
    tau = ad.mul(sigma, ad.constant(delta))
    trans = ad.exp(ad.neg(ad.cumsum_exclusive(tau, axis=1)))
    alpha_s = ad.sub(ad.constant(np.ones(())), ad.exp(ad.neg(tau)))
    weights = ad.mul(trans, alpha_s)
    c_pix = ad.tsum(ad.mul(ad.reshape(weights, (r, s, 1)), color), axis=1)
    alpha_pix = ad.tsum(weights, axis=1)
    t_end = ad.exp(ad.neg(ad.tsum(tau, axis=1)))
    depth_num = ad.tsum(ad.mul(weights, ad.constant(t)), axis=1)
    depth = ad.div(depth_num, ad.clip(alpha_pix, DEPTH_EPS, np.inf))
    empty = (alpha_pix.data == 0.0).astype(np.float64)
    if empty.any():
        depth = ad.add(depth, ad.constant(empty * t_far))
    return {"C": c_pix, "alpha": alpha_pix, "depth": depth,
            "weights": weights, "T_end": t_end}


def composite_background(c_pix: Tensor, alpha_pix: Tensor, bg_color) -> Tensor:
    """C + (1 - alpha) * background."""
    bg = np.asarray(bg_color, dtype=np.float64).reshape(1, 3)
    r = alpha_pix.shape[0]
    resid = ad.sub(ad.constant(np.ones(())), alpha_pix)
    return ad.add(c_pix, ad.mul(ad.reshape(resid, (r, 1)), ad.constant(bg)))


def render_frame(field_fn, camera: Camera, width: int, height: int,
                 box_min, box_max, bg_color, n_samples: int = 64,
                 jitter_seed=None, chunk_rays: int = 4096,
                 want_aux: bool = False):
    """Render a full frame by tiles.

    ``field_fn(points (N,3), dirs (N,3)) -> (sigma (N,1), color (N,3), aux)``
    evaluates the scene model; aux maps names to per-point (N, k) tensors
    whose per-pixel weighted sums are accumulated when ``want_aux`` is set
    (used for deformation heat maps).  Returns numpy maps: image (H, W, 3),
    alpha (H, W), depth (H, W), and the aux accumulation dict.
    """
    rays = make_rays(camera, width, height, box_min, box_max)
    n = len(rays)
    image = np.empty((n, 3))
    alpha = np.zeros(n)
    depth = np.full(n, 0.0)
    aux_maps: dict = {}
    bg = np.asarray(bg_color, dtype=np.float64)

    for lo in range(0, n, chunk_rays):
        hi = min(lo + chunk_rays, n)
        sel = slice(lo, hi)
        valid = rays.valid[sel]
        if not valid.any():
            image[sel] = bg
            depth[sel] = rays.t_far[sel]
            continue
        seed = None if jitter_seed is None else tuple(jitter_seed) + (lo,)
        t, delta = sample_ray(rays.t_near[sel], rays.t_far[sel], n_samples, seed)
        nr = hi - lo
        pts = rays.origins[sel][:, None, :] + t[..., None] * rays.dirs[sel][:, None, :]
        dirs = np.broadcast_to(rays.dirs[sel][:, None, :], pts.shape)
        sigma, color, aux = field_fn(pts.reshape(-1, 3), dirs.reshape(-1, 3).copy())
        out = integrate(ad.reshape(sigma, (nr, n_samples)),
                        ad.reshape(color, (nr, n_samples, 3)),
                        t, delta, rays.t_far[sel])
        final = composite_background(out["C"], out["alpha"], bg)
        image[sel] = final.data
        alpha[sel] = out["alpha"].data
        depth[sel] = out["depth"].data
        if want_aux and aux:
            w = out["weights"].data  # (nr, S)
            for name, val in aux.items():
                per_pt = val.data.reshape(nr, n_samples, -1)
                acc = aux_maps.setdefault(name, np.zeros(n))
                acc[sel] = (w[..., None] * per_pt).sum(axis=(1, 2))
        # rays that miss the box render pure background
        miss = ~valid
        if miss.any():
            idx = np.flatnonzero(miss) + lo
            image[idx] = bg
            alpha[idx] = 0.0
            depth[idx] = rays.t_far[idx]

    image = image.reshape(height, width, 3)
    alpha = alpha.reshape(height, width)
    depth = depth.reshape(height, width)
    aux_maps = {k: v.reshape(height, width) for k, v in aux_maps.items()}
    return image, alpha, depth, aux_maps
