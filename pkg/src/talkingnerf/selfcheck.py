"""Built-in gradient verification on a 4-ray micro-scene.

Builds a miniature end-to-end graph (identity encoder, hypernetwork,
cascaded deformation, radiance, volume rendering, all losses) and compares
analytic gradients against central finite differences for every loss term
and their weighted sum.  Parameters are nudged off their symmetric
initialization so gradients are generically nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .deform import DrivingSignals, SignalDims
from .gradcheck import GradCheckReport, grad_check
from .idtransfer import build_transfer
from .losses import (LossWeights, attention_reg_loss, color_loss, entropy_loss,
                     masks_from_labels, perceptual_proxy_loss, pixel_weights,
                     region_reg_loss, total_loss)
from .model import PortraitModel
from .render import composite_background, integrate, make_rays, sample_ray
from .rng import make_rng
from .synthdata import SCENE_BOX_MAX, SCENE_BOX_MIN, base_camera

N_SAMPLES = 4
TINY_ENC = dict(levels=2, features_per_level=2, table_size_log2=6,
                base_resolution=4, per_level_scale=1.5)


@dataclass
class MicroScene:
    model: PortraitModel
    state: object
    params: dict
    signals: DrivingSignals
    ref_image: np.ndarray
    ref_labels: np.ndarray
    origins: np.ndarray
    dirs: np.ndarray
    t: np.ndarray
    delta: np.ndarray
    t_far: np.ndarray
    gt: np.ndarray
    labels: np.ndarray
    bg: np.ndarray


def build_micro_scene(seed: int = 0) -> MicroScene:
    """A 2x2-pixel frame (4 rays), tiny encoders, full loss surface."""
    dims = SignalDims(d_a=4, d_e=1, d_h=6)
    model = PortraitModel(dims, variant="odr", with_id=True, seed=seed,
                          deform_enc=TINY_ENC, canon_enc=TINY_ENC)
    state = build_transfer(model, seed)
    params = {**model.params(), **state.params()}

    # move off the symmetric zero initialization so every path carries signal
    for i, name in enumerate(sorted(params)):
        p = params[name]
        p.data = p.data + make_rng(777, seed, i).normal(scale=0.02,
                                                        size=p.data.shape)

    rng = make_rng(31337, seed)
    signals = DrivingSignals(rng.normal(size=4) * 0.5, [0.3],
                             rng.normal(size=6) * 0.1)
    camera = base_camera(2, 2)
    rays = make_rays(camera, 2, 2, SCENE_BOX_MIN, SCENE_BOX_MAX)
    if not rays.valid.all():
        raise RuntimeError("micro-scene rays must all hit the scene box")
    t, delta = sample_ray(rays.t_near, rays.t_far, N_SAMPLES, jitter_seed=None)
    return MicroScene(
        model=model, state=state, params=params, signals=signals,
        ref_image=rng.uniform(size=(8, 8, 3)),
        ref_labels=(rng.uniform(size=(8, 8)) * 5).astype(np.uint8),
        origins=rays.origins, dirs=rays.dirs, t=t, delta=delta,
        t_far=rays.t_far,
        gt=rng.uniform(size=(4, 3)),
        labels=np.array([0, 2, 4, 3], dtype=np.uint8),
        bg=np.array([0.5, 0.5, 0.5]),
    )


def forward_parts(sc: MicroScene) -> dict:
    """Rebuild the full graph from current parameter values; return losses."""
    bundle = sc.state.encode_identity(sc.ref_image, sc.ref_labels)
    ctx = bundle.context()
    r, s = sc.t.shape
    pts = sc.origins[:, None, :] + sc.dirs[:, None, :] * sc.t[:, :, None]
    sigma, color, aux = sc.model.forward_points(
        pts.reshape(-1, 3), np.repeat(sc.dirs, s, axis=0), sc.signals, ctx)
    out = integrate(ad.reshape(sigma, (r, s)), ad.reshape(color, (r, s, 3)),
                    sc.t, sc.delta, sc.t_far)
    pred = composite_background(out["C"], out["alpha"], sc.bg)

    masks = masks_from_labels(sc.labels)
    w = pixel_weights(masks)
    per = {k: np.repeat(v, s) for k, v in masks.items()}
    att_terms = {
        name: attention_reg_loss({name: aux[f"f_{name}"]}, {name: per[name]})
        for name in ("lip", "eye", "torso")
    }
    parts = {
        "color": color_loss(pred, sc.gt, w),
        "delta": region_reg_loss(aux["delta_face"], aux["delta_torso"],
                                 per["face"], per["torso"]),
        "att": attention_reg_loss(
            {k: aux[f"f_{k}"] for k in ("lip", "eye", "torso")}, per),
        "alpha": entropy_loss(out["alpha"]),
        "lpips": perceptual_proxy_loss(ad.reshape(pred, (2, 2, 3)),
                                       sc.gt.reshape(2, 2, 3)),
    }
    return parts, att_terms


def loss_closures(sc: MicroScene) -> dict:
    """Named scalar closures over the scene parameters, one per loss term."""

    def term(key):
        def f():
            parts, _ = forward_parts(sc)
            return parts[key]
        return f

    def att_term(key):
        def f():
            _, att_terms = forward_parts(sc)
            return att_terms[key]
        return f

    def composed():
        parts, _ = forward_parts(sc)
        # evaluate in the perceptual-active regime so every term contributes
        total, _ = total_loss(parts, LossWeights(), 95, 100)
        return total

    out = {
        "color": term("color"),
        "region": term("delta"),
        "attention_lip": att_term("lip"),
        "attention_eye": att_term("eye"),
        "attention_torso": att_term("torso"),
        "attention": term("att"),
        "opacity_entropy": term("alpha"),
        "perceptual": term("lpips"),
        "total": composed,
    }
    return out


def run_selfcheck(module: str = None, elements_per_param: int = 4,
                  tol: float = 1e-4, seed: int = 0, log=None):
    """Gradient-check every loss term; returns (all_ok, {name: report}).

    ``module`` restricts the run to one named term.  The step and floor are
    sized for composed losses of magnitude ~10: the 1e-5 step keeps float64
    cancellation near 1e-10 absolute, and the 1e-4 floor keeps that noise
    out of the relative deviation on near-zero gradient elements.
    """
    sc = build_micro_scene(seed)
    closures = loss_closures(sc)
    if module is not None:
        if module not in closures:
            raise ValueError(
                f"unknown module {module!r}; choose from {sorted(closures)}")
        closures = {module: closures[module]}
    results = {}
    all_ok = True
    for name in sorted(closures):
        report = grad_check(closures[name], sc.params,
                            step=1e-5, floor=1e-4,
                            elements_per_param=elements_per_param)
        ok = report.max_deviation < tol
        all_ok &= ok
        results[name] = report
        if log is not None:
            log(f"{name}: max rel dev {report.max_deviation:.3e} "
                f"(worst {report.worst_param}) "
                f"{'PASS' if ok else 'FAIL'} (tol {tol:g})")
    return all_ok, results
