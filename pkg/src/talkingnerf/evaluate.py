"""Quality metrics and validation rendering.

PSNR is measured against the stored ground-truth frames.  Keypoint error
compares region centroids extracted from the rendered image against
centroids extracted from the ground-truth image by the same palette
segmentation, so a perfect render scores exactly zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .render import render_frame
from .synthdata import SCENE_BOX_MAX, SCENE_BOX_MIN, SyntheticIdentity

EVAL_SAMPLES = 32
MIN_REGION_PX = 6


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; inf if identical."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


def segment_by_palette(img: np.ndarray, identity: SyntheticIdentity,
                       bg_color) -> np.ndarray:
    """Nearest-color region labels (0=bg, 1=torso, 2=face, 3=eye, 4=lip)."""
    colors = np.stack([
        np.asarray(bg_color, dtype=np.float64),
        np.asarray(identity.palette["torso"]),
        np.asarray(identity.palette["face"]),
        np.asarray(identity.palette["eye"]),
        np.asarray(identity.palette["lip"]),
    ])
    d = np.linalg.norm(img[..., None, :] - colors, axis=-1)  # (H, W, 5)
    return np.argmin(d, axis=-1).astype(np.uint8)


def _centroid(ys, xs):
    return np.array([xs.mean() + 0.5, ys.mean() + 0.5])


def region_centroids(labels: np.ndarray) -> dict:
    """Centroids in continuous pixel coordinates; eyes split left/right.

    Keys present only when the region covers at least MIN_REGION_PX pixels
    (smaller slivers cannot be localized meaningfully on either side):
    eye_l, eye_r, lip_c, torso_c.
    """
    out = {}
    ys, xs = np.nonzero(labels == 3)
    if len(xs) >= MIN_REGION_PX:
        mid = xs.mean()
        left = xs < mid
        if left.any() and (~left).any():
            out["eye_l"] = _centroid(ys[left], xs[left])
            out["eye_r"] = _centroid(ys[~left], xs[~left])
        else:
            out["eye_l"] = out["eye_r"] = _centroid(ys, xs)
    ys, xs = np.nonzero(labels == 4)
    if len(xs) >= MIN_REGION_PX:
        out["lip_c"] = _centroid(ys, xs)
    ys, xs = np.nonzero(labels == 1)
    if len(xs) >= MIN_REGION_PX:
        out["torso_c"] = _centroid(ys, xs)
    return out


def keypoint_error(pred_img: np.ndarray, gt_img: np.ndarray,
                   identity: SyntheticIdentity, bg_color) -> dict:
    """Per-keypoint pixel distance between render and ground truth.

    Regions absent from the ground truth (closed eyes, closed mouth) are
    skipped; regions the render failed to produce score the image diagonal.
    Returns per-key distances plus their mean under ``"mean"`` (NaN when no
    region is comparable).
    """
    gt_cen = region_centroids(segment_by_palette(gt_img, identity, bg_color))
    pr_cen = region_centroids(segment_by_palette(pred_img, identity, bg_color))
    h, w = gt_img.shape[:2]
    diag = float(np.hypot(w, h))
    out = {}
    for key, g in gt_cen.items():
        p = pr_cen.get(key)
        out[key] = diag if p is None else float(np.linalg.norm(p - g))
    out["mean"] = float(np.mean([v for k, v in out.items()])) if out else float("nan")
    return out


@dataclass
class MetricReport:
    psnr_mean: float
    psnr_per_frame: list
    keypoint_mean: float
    keypoint_per_frame: list
    frames: list

    def to_json(self) -> dict:
        return {
            "psnr_mean": self.psnr_mean,
            "psnr_per_frame": self.psnr_per_frame,
            "keypoint_mean": self.keypoint_mean,
            "keypoint_per_frame": self.keypoint_per_frame,
            "frames": self.frames,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def render_model_frame(model, ctx, ds: Dataset, id_idx: int, frame_idx: int,
                       n_samples: int = EVAL_SAMPLES, heat: bool = False):
    """Deterministic (jitter-free) render of one dataset frame.

    Returns (image (H,W,3) float, alpha, depth, aux maps) as plain arrays.
    """
    rec = ds.frame(id_idx, frame_idx)
    m = ds.manifest
    return render_frame(
        model.field_fn(rec.signals, ctx, heat=heat),
        rec.camera, m.width, m.height,
        SCENE_BOX_MIN, SCENE_BOX_MAX, m.bg_color,
        n_samples=n_samples, want_aux=heat,
    )


def evaluate(model, ctx, ds: Dataset, id_idx: int = 0, split: str = "val",
             n_samples: int = EVAL_SAMPLES, frame_indices=None,
             progress=None) -> MetricReport:
    """PSNR and keypoint error over a dataset split (detach model first)."""
    train_idx, val_idx = ds.split()
    if frame_indices is None:
        frame_indices = {"train": train_idx, "val": val_idx}[split]
    identity = ds.identity(id_idx)
    bg = ds.manifest.bg_color
    psnrs, kps, used = [], [], []
    for f in frame_indices:
        f = int(f)
        rec = ds.frame(id_idx, f)
        img, _, _, _ = render_model_frame(model, ctx, ds, id_idx, f,
                                          n_samples=n_samples)
        psnrs.append(psnr(img, rec.image))
        kp = keypoint_error(img, rec.image, identity, bg)
        kps.append(kp["mean"])
        used.append(f)
        if progress is not None:
            progress(f, psnrs[-1])
    kp_vals = [k for k in kps if np.isfinite(k)]
    return MetricReport(
        psnr_mean=float(np.mean(psnrs)),
        psnr_per_frame=[float(p) for p in psnrs],
        keypoint_mean=float(np.mean(kp_vals)) if kp_vals else float("nan"),
        keypoint_per_frame=[float(k) for k in kps],
        frames=used,
    )


def heat_ratios(model, ctx, ds: Dataset, id_idx: int, frame_idx: int,
                n_samples: int = EVAL_SAMPLES) -> dict:
    """Localization diagnostics for the cascaded deformation model.

    ``face_heat_ratio``: mean rendered face-deformation magnitude inside the
    face mask over outside.  ``lip_gate_ratio``: mean rendered lip-gate value
    on lip pixels over non-lip pixels.  Ratios are inf when the outside mean
    is zero.
    """
    rec = ds.frame(id_idx, frame_idx)
    _, _, _, aux = render_model_frame(model, ctx, ds, id_idx, frame_idx,
                                      n_samples=n_samples, heat=True)
    if "face_heat" not in aux:
        raise ValueError("heat ratios require the cascaded deformation model")
    face = (rec.labels >= 2) & (rec.labels <= 4)
    torso = rec.labels == 1
    lip = rec.labels == 4

    def ratio(mp, inside):
        hi = float(mp[inside].mean()) if inside.any() else float("nan")
        lo = float(mp[~inside].mean()) if (~inside).any() else float("nan")
        if lo == 0.0:
            return float("inf") if hi > 0 else float("nan")
        return hi / lo

    return {
        "face_heat_ratio": ratio(aux["face_heat"], face),
        "torso_heat_ratio": ratio(aux["torso_heat"], torso),
        "lip_gate_ratio": ratio(aux["lip_gate"], lip),
    }
