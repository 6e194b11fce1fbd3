"""Training objectives.

Weighted color MSE in pixel space, region regularization and attention
regularization in 3-D sample space, transparency entropy on pixel opacity, a
deterministic multi-scale convolutional perceptual distance, and the
weighted total with its activation schedule (the perceptual term joins for
the final stretch of training).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import avg_pool2, conv2d
from .rng import make_rng

ENTROPY_EPS = 1e-7
PROXY_SEED = 13
PROXY_SCALES = 3
PROXY_CHANNELS = 8


@dataclass(frozen=True)
class LossWeights:
    lam_delta: float = 1e-5
    lam_att: float = 1e-4
    lam_alpha: float = 1e-4
    lam_lpips: float = 5e-3
    lpips_active_fraction: float = 0.8
    region_rampup: float = 0.0

    def __post_init__(self):
        for name in ("lam_delta", "lam_att", "lam_alpha", "lam_lpips"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.lpips_active_fraction <= 1.0:
            raise ValueError("lpips_active_fraction must lie in [0, 1]")
        if not 0.0 <= self.region_rampup <= 1.0:
            raise ValueError("region_rampup must lie in [0, 1]")


@dataclass
class LossReport:
    l_color: float
    l_delta: float
    l_att: float
    l_alpha: float
    l_lpips: float
    total: float

    def to_json(self) -> dict:
        return {"L_color": self.l_color, "L_delta": self.l_delta,
                "L_att": self.l_att, "L_alpha": self.l_alpha,
                "L_lpips": self.l_lpips, "total": self.total}


def masks_from_labels(labels: np.ndarray) -> dict:
    """Binary region maps from a label image (0=bg 1=torso 2=face 3=eye 4=lip)."""
    labels = np.asarray(labels)
    face = ((labels >= 2) & (labels <= 4)).astype(np.float64)
    return {
        "face": face,
        "torso": (labels == 1).astype(np.float64),
        "eye": (labels == 3).astype(np.float64),
        "lip": (labels == 4).astype(np.float64),
    }


def pixel_weights(masks: dict, face_bonus: float = 4.0,
                  mouth_eye_bonus: float = 9.0) -> np.ndarray:
    """w = 1 + face_bonus*face + mouth_eye_bonus*(eye or lip); always >= 1."""
    inner = np.maximum(masks["eye"], masks["lip"])
    return 1.0 + face_bonus * masks["face"] + mouth_eye_bonus * inner


def color_loss(pred: Tensor, gt: np.ndarray, weights: np.ndarray) -> Tensor:
    """Sum of w_i * ||C_i - C_hat_i||^2 over pixels."""
    if isinstance(gt, Tensor):
        gt = gt.data
    gt = np.asarray(gt, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if weights.shape[0] != pred.shape[0]:
        raise ValueError(
            f"{weights.shape[0]} weights for {pred.shape[0]} pixels"
        )
    sq = ad.tsum(ad.square(ad.sub(pred, ad.constant(gt))), axis=-1)
    return ad.tsum(ad.mul(sq, ad.constant(weights)))


def region_reg_loss(delta_face: Tensor, delta_torso: Tensor,
                    face_mask: np.ndarray, torso_mask: np.ndarray) -> Tensor:
    """Penalize deformation magnitude outside each field's own region.

    Per sample point: ||delta_face|| where the pixel is not face, plus
    ||delta_torso|| where it is not torso (Euclidean norms).
    """
    face_mask = np.asarray(face_mask, dtype=np.float64).reshape(-1)
    torso_mask = np.asarray(torso_mask, dtype=np.float64).reshape(-1)
    lf = ad.tsum(ad.mul(ad.l2norm_lastaxis(delta_face),
                        ad.constant(1.0 - face_mask)))
    lt = ad.tsum(ad.mul(ad.l2norm_lastaxis(delta_torso),
                        ad.constant(1.0 - torso_mask)))
    return ad.add(lf, lt)


def attention_reg_loss(scores: dict, masks: dict) -> Tensor:
    """Sum over signals of |f_s| outside the signal's own region mask.

    ``scores`` maps signal name (lip/eye/torso) to an (N, 1) or (N,) score
    tensor; ``masks`` maps the same names to per-sample binary arrays.
    """
    total = None
    for name, score in scores.items():
        m = np.asarray(masks[name], dtype=np.float64).reshape(-1)
        flat = ad.reshape(score, (score.size,))
        term = ad.tsum(ad.mul(ad.absolute(flat), ad.constant(1.0 - m)))
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("attention_reg_loss needs at least one score")
    return total


def entropy_loss(alpha: Tensor) -> Tensor:
    """Binary entropy summed over pixels; exactly zero at alpha of 0 or 1.

    Values outside [0, 1] (never produced by the renderer) are defensively
    remapped to [eps, 1-eps] with no gradient.
    """
    data = alpha.data
    outside = (data < 0.0) | (data > 1.0)
    if outside.any():
        keep = (~outside).astype(np.float64)
        fix = np.clip(data, ENTROPY_EPS, 1.0 - ENTROPY_EPS) * outside
        alpha = ad.add(ad.mul(alpha, ad.constant(keep)), ad.constant(fix))
    return ad.tsum(ad.binary_entropy(alpha))


_PROXY_FILTERS: dict = {}


def _proxy_filters(c_in: int):
    key = c_in
    if key not in _PROXY_FILTERS:
        filters = []
        for scale in range(PROXY_SCALES):
            rng = make_rng(PROXY_SEED, scale)
            w = rng.normal(size=(3, 3, c_in, PROXY_CHANNELS))
            filters.append(ad.constant(w / np.sqrt(9.0 * c_in)))
        _PROXY_FILTERS[key] = filters
    return _PROXY_FILTERS[key]


def perceptual_proxy_loss(pred: Tensor, gt) -> Tensor:
    """Multi-scale fixed-random-filter feature distance (perceptual stand-in).

    Linear convolutional features at up to three dyadic scales; the result
    is symmetric in its arguments and zero for identical images.
    """
    gt_t = gt if isinstance(gt, Tensor) else ad.constant(np.asarray(gt, dtype=np.float64))
    if pred.shape != gt_t.shape or pred.ndim != 3:
        raise ValueError(
            f"expected matching (H, W, C) images, got {pred.shape} vs {gt_t.shape}"
        )
    filters = _proxy_filters(pred.shape[2])
    total = None
    a, b = pred, gt_t
    for scale in range(PROXY_SCALES):
        fa = conv2d(a, filters[scale])
        fb = conv2d(b, filters[scale])
        term = ad.tmean(ad.square(ad.sub(fa, fb)))
        total = term if total is None else ad.add(total, term)
        if min(a.shape[0], a.shape[1]) < 2 or scale == PROXY_SCALES - 1:
            break
        a, b = avg_pool2(a), avg_pool2(b)
    return total


def lpips_weight_at(weights: LossWeights, iteration: int,
                    total_iterations: int) -> float:
    """Zero until the activation fraction of training is reached."""
    if total_iterations <= 0:
        raise ValueError("total_iterations must be positive")
    progress = iteration / total_iterations
    return weights.lam_lpips if progress >= weights.lpips_active_fraction else 0.0


def region_weight_scale(weights: LossWeights, iteration: int,
                        total_iterations: int) -> float:
    """Warm-up factor for the region-confinement penalties.

    The deformation and attention penalties only prune structure that the
    color objective has had a chance to build; applying them at full
    strength from the first step can collapse the deformation pathway
    before it becomes useful.  The factor rises linearly from zero to one
    over the first ``region_rampup`` fraction of training (zero disables
    the ramp entirely).
    """
    if total_iterations <= 0:
        raise ValueError("total_iterations must be positive")
    if weights.region_rampup <= 0.0:
        return 1.0
    progress = iteration / total_iterations
    return min(1.0, progress / weights.region_rampup)


def total_loss(parts: dict, weights: LossWeights, iteration: int,
               total_iterations: int):
    """Weighted sum of the itemized objectives.

    ``parts`` maps {color, delta, att, alpha, lpips} to scalar tensors;
    missing entries count as zero.  Returns (total tensor, LossReport).
    """
    lam_lpips = lpips_weight_at(weights, iteration, total_iterations)
    ramp = region_weight_scale(weights, iteration, total_iterations)
    lams = {"color": 1.0, "delta": ramp * weights.lam_delta,
            "att": ramp * weights.lam_att,
            "alpha": weights.lam_alpha, "lpips": lam_lpips}
    total = None
    values = {}
    for name, lam in lams.items():
        part = parts.get(name)
        values[name] = 0.0 if part is None else float(part.data)
        if part is None or lam == 0.0:
            continue
        term = ad.mul(part, ad.constant(lam))
        total = term if total is None else ad.add(total, term)
    if total is None:
        total = ad.constant(np.zeros(()))
    report = LossReport(values["color"], values["delta"], values["att"],
                        values["alpha"], values["lpips"], float(total.data))
    return total, report
