"""Training loops: multi-identity pretraining and per-identity fine-tuning.

Every run is deterministic in its config seed: frame order, pixel
subsampling, and quadrature jitter all derive from counter-based streams,
so identical configs produce byte-identical checkpoints.

Identity conditioning is always on.  During pretraining the reference-frame
encoder and the final-layer hypernetwork produce each identity's
conditioning inside the training graph; fine-tuning materializes them into
plain parameters (identity codes plus overwritten final layers) and trains
those at a faster rate than the shared weights.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import Dataset, load_dataset
from .deform import SignalDims
from .evaluate import evaluate
from .idtransfer import IdTransferState, TransferPhase, build_transfer, restore_finetune
from .losses import (LossWeights, attention_reg_loss, color_loss, entropy_loss,
                     masks_from_labels, perceptual_proxy_loss, pixel_weights,
                     region_reg_loss, total_loss)
from .model import PortraitModel, detached_context
from .optim import Adam, ParamGroup
from .render import composite_background, integrate, make_rays, sample_ray
from .rng import make_rng
from .synthdata import SCENE_BOX_MAX, SCENE_BOX_MIN


@dataclass
class TrainConfig:
    variant: str = "odr"
    seed: int = 0
    epochs: int = 50
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    id_lr_start: float = 1e-3
    id_lr_end: float = 1e-4
    shared_lr_start: float = 1e-4
    shared_lr_end: float = 1e-5
    n_samples: int = 32
    batch_rays: int = 1024
    crop_size: int = 32
    lam_delta: float = 1e-5
    lam_att: float = 1e-4
    lam_alpha: float = 1e-4
    lam_lpips: float = 5e-3
    lpips_fraction: float = 0.8
    region_rampup: float = 0.3
    frames_fraction: float = 1.0
    eval_every: int = 1
    eval_frames: int = 2
    log_every: int = 50
    checkpoint_every: int = 1
    early_stop_psnr: float = 0.0
    max_seconds: float = 0.0
    deform_enc: dict = field(default_factory=dict)
    canon_enc: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        unknown = set(obj) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**obj)

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lam_delta=self.lam_delta, lam_att=self.lam_att,
            lam_alpha=self.lam_alpha, lam_lpips=self.lam_lpips,
            lpips_active_fraction=self.lpips_fraction,
            region_rampup=self.region_rampup,
        )


def build_model(cfg: TrainConfig, d_a: int) -> PortraitModel:
    dims = SignalDims(d_a=d_a, d_e=1, d_h=6)
    kw = {}
    if cfg.deform_enc:
        kw["deform_enc"] = cfg.deform_enc
    if cfg.canon_enc:
        kw["canon_enc"] = cfg.canon_enc
    return PortraitModel(dims, variant=cfg.variant, with_id=True,
                         seed=cfg.seed, **kw)


def _train_frames(ds: Dataset, fraction: float) -> np.ndarray:
    """Leading fraction of the training split (deterministic prefix)."""
    train_idx, _ = ds.split()
    n = max(1, int(round(fraction * len(train_idx))))
    return train_idx[:n]


def _ray_cache(ds: Dataset):
    cache = {}

    def get(id_idx, frame_idx):
        key = (id_idx, frame_idx)
        if key not in cache:
            rec = ds.frame(id_idx, frame_idx)
            cache[key] = make_rays(rec.camera, ds.manifest.width,
                                   ds.manifest.height,
                                   SCENE_BOX_MIN, SCENE_BOX_MAX)
        return cache[key]

    return get


def _pick_pixels(rng, width, height, batch_rays, crop_size, crop_mode):
    """Flat pixel indices for one step; crops are contiguous blocks."""
    n = width * height
    if crop_mode:
        side = min(crop_size, width, height)
        r0 = int(rng.integers(0, height - side + 1))
        c0 = int(rng.integers(0, width - side + 1))
        rows = np.arange(r0, r0 + side)
        cols = np.arange(c0, c0 + side)
        pix = (rows[:, None] * width + cols[None, :]).reshape(-1)
        return pix, side
    if batch_rays >= n:
        return np.arange(n), 0
    pix = rng.choice(n, size=batch_rays, replace=False)
    pix.sort()
    return pix, 0


class TrainingDiverged(FloatingPointError):
    pass


def train_loop(model: PortraitModel, state: IdTransferState, ds: Dataset,
               id_indices, cfg: TrainConfig, out_dir: str,
               log=None) -> dict:
    """Shared epoch loop for both phases.  Returns the run history."""
    os.makedirs(out_dir, exist_ok=True)
    pretrain = state.phase is TransferPhase.PRETRAIN
    if pretrain:
        groups = [ParamGroup("main", {**model.params(), **state.params()},
                             cfg.lr_start, cfg.lr_end)]
    else:
        groups = [
            ParamGroup("id", dict(state.params()),
                       cfg.id_lr_start, cfg.id_lr_end),
            ParamGroup("shared", dict(model.params()),
                       cfg.shared_lr_start, cfg.shared_lr_end),
        ]
    opt = Adam(groups)
    weights = cfg.loss_weights()

    frames = _train_frames(ds, cfg.frames_fraction)
    pairs = [(i, int(f)) for i in id_indices for f in frames]
    steps_per_epoch = len(pairs)
    total_steps = cfg.epochs * steps_per_epoch
    rays_of = _ray_cache(ds)
    m = ds.manifest
    bg = np.asarray(m.bg_color)
    n_pix = m.width * m.height

    refs = {i: ds.frame(i, int(frames[0])) for i in id_indices}
    fixed_ctx = None if pretrain else state.context()

    log_path = os.path.join(out_dir, "train_log.jsonl")
    history = {"log": [], "eval": [], "stopped_early": False,
               "global_step": 0, "wall_seconds": 0.0}
    t_start = time.monotonic()
    gstep = 0
    stop = False

    with open(log_path, "w") as log_fh:
        for epoch in range(cfg.epochs):
            order = make_rng(cfg.seed, 5, epoch).permutation(len(pairs))
            for k in order:
                id_idx, f = pairs[k]
                rec = ds.frame(id_idx, f)
                rays = rays_of(id_idx, f)
                progress = gstep / total_steps
                crop_mode = (weights.lam_lpips > 0
                             and progress >= weights.lpips_active_fraction)
                prng = make_rng(cfg.seed, 7, gstep)
                pix, side = _pick_pixels(prng, m.width, m.height,
                                         cfg.batch_rays, cfg.crop_size,
                                         crop_mode)
                ok = rays.valid[pix]
                if not ok.all():
                    if crop_mode:
                        crop_mode = False
                        side = 0
                    pix = pix[ok]
                if len(pix) == 0:
                    gstep += 1
                    continue

                if pretrain:
                    ref = refs[id_idx]
                    bundle = state.encode_identity(ref.image, ref.labels)
                    ctx = bundle.context()
                else:
                    ctx = fixed_ctx

                origins = rays.origins[pix]
                dirs = rays.dirs[pix]
                t, delta = sample_ray(rays.t_near[pix], rays.t_far[pix],
                                      cfg.n_samples,
                                      jitter_seed=(cfg.seed, 11, gstep))
                r, s = t.shape
                pts = origins[:, None, :] + dirs[:, None, :] * t[:, :, None]
                sigma, color, aux = model.forward_points(
                    pts.reshape(-1, 3), np.repeat(dirs, s, axis=0),
                    rec.signals, ctx)
                out = integrate(ad.reshape(sigma, (r, s)),
                                ad.reshape(color, (r, s, 3)),
                                t, delta, rays.t_far[pix])
                pred = composite_background(out["C"], out["alpha"], bg)

                gt_flat = rec.image.reshape(-1, 3)[pix]
                labels_flat = rec.labels.reshape(-1)[pix]
                masks = masks_from_labels(labels_flat)
                w_pix = pixel_weights(masks)

                parts = {"color": color_loss(pred, gt_flat, w_pix)}

                def per_sample(a):
                    return np.repeat(a, s)

                if "delta_face" in aux:
                    parts["delta"] = region_reg_loss(
                        aux["delta_face"], aux["delta_torso"],
                        per_sample(masks["face"]), per_sample(masks["torso"]))
                    parts["att"] = attention_reg_loss(
                        {"lip": aux["f_lip"], "eye": aux["f_eye"],
                         "torso": aux["f_torso"]},
                        {"lip": per_sample(masks["lip"]),
                         "eye": per_sample(masks["eye"]),
                         "torso": per_sample(masks["torso"])})
                elif "delta" in aux:
                    body = np.maximum(masks["face"], masks["torso"])
                    parts["delta"] = ad.tsum(ad.mul(
                        ad.l2norm_lastaxis(aux["delta"]),
                        ad.constant(1.0 - per_sample(body))))
                parts["alpha"] = entropy_loss(out["alpha"])
                if crop_mode:
                    gt_crop = gt_flat.reshape(side, side, 3)
                    parts["lpips"] = perceptual_proxy_loss(
                        ad.reshape(pred, (side, side, 3)), gt_crop)

                total, report = total_loss(parts, weights, gstep, total_steps)
                if not np.isfinite(total.data):
                    dump = {"step": gstep, "epoch": epoch, "id": id_idx,
                            "frame": f, "losses": report.to_json()}
                    with open(os.path.join(out_dir, "diverged.json"), "w") as fh:
                        json.dump(dump, fh, indent=1)
                    raise TrainingDiverged(
                        f"non-finite loss at step {gstep}: {report.to_json()}")

                ad.backward(total)
                rates = opt.step(epoch + (gstep % steps_per_epoch) / steps_per_epoch,
                                 cfg.epochs)
                opt.zero_grad()

                if gstep % cfg.log_every == 0:
                    line = {"step": gstep, "epoch": epoch,
                            **report.to_json(),
                            "lr": {k: float(v) for k, v in rates.items()},
                            "elapsed": round(time.monotonic() - t_start, 2)}
                    log_fh.write(json.dumps(line) + "\n")
                    log_fh.flush()
                    history["log"].append(line)
                    if log is not None:
                        log(f"step {gstep}/{total_steps} "
                            f"loss {report.total:.5f} color {report.l_color:.5f}")
                gstep += 1
                if cfg.max_seconds > 0 and time.monotonic() - t_start > cfg.max_seconds:
                    stop = True
                    history["stopped_early"] = True
                    break

            do_eval = cfg.eval_every > 0 and ((epoch + 1) % cfg.eval_every == 0
                                              or epoch == cfg.epochs - 1 or stop)
            if do_eval:
                val_psnr = _quick_val_psnr(model, state, ds, id_indices, cfg, refs)
                ev = {"epoch": epoch, "step": gstep, "val_psnr": val_psnr}
                history["eval"].append(ev)
                log_fh.write(json.dumps(ev) + "\n")
                log_fh.flush()
                if log is not None:
                    log(f"epoch {epoch + 1}/{cfg.epochs} val PSNR {val_psnr:.2f} dB")
                if cfg.early_stop_psnr > 0 and val_psnr >= cfg.early_stop_psnr:
                    history["stopped_early"] = True
                    stop = True
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1 or stop:
                save_run_checkpoint(os.path.join(out_dir, "ckpt_latest.loki"),
                                    model, state, opt, cfg, ds,
                                    epoch=epoch, global_step=gstep)
            if stop:
                break

    history["global_step"] = gstep
    history["wall_seconds"] = time.monotonic() - t_start
    return history


def _quick_val_psnr(model, state, ds, id_indices, cfg, refs) -> float:
    """Mean validation PSNR over a few frames of the first identity."""
    _, val_idx = ds.split()
    frames = val_idx[: max(1, cfg.eval_frames)]
    i0 = id_indices[0]
    det = model.detached()
    ctx = _eval_context(state, refs[i0])
    rep = evaluate(det, ctx, ds, id_idx=i0, frame_indices=frames,
                   n_samples=cfg.n_samples)
    return rep.psnr_mean


def _eval_context(state, ref):
    if state.phase is TransferPhase.PRETRAIN:
        bundle = state.encode_identity(ref.image, ref.labels)
        return detached_context(bundle.context())
    return detached_context(state.context())


# -- checkpoint plumbing ------------------------------------------------------------


def save_run_checkpoint(path, model, state, opt, cfg, ds, epoch, global_step):
    params = {name: p.data for name, p in
              {**model.params(), **state.params()}.items()}
    st = opt.state_arrays()
    st["train.progress"] = np.array([float(epoch), float(global_step)])
    meta = {
        "phase": state.phase.value,
        "config": cfg.to_json(),
        "d_a": ds.manifest.d_a,
        "width": ds.manifest.width,
        "height": ds.manifest.height,
        "bg_color": list(ds.manifest.bg_color),
        "epoch": epoch,
        "global_step": global_step,
    }
    save_checkpoint(path, params, st, meta)


def build_from_checkpoint(path):
    """Rebuild (model, state, cfg, meta) from a checkpoint file."""
    params, st_arrays, meta = load_checkpoint(path)
    cfg = TrainConfig.from_json(meta["config"])
    model = build_model(cfg, d_a=meta["d_a"])
    phase = meta["phase"]
    if phase == TransferPhase.PRETRAIN.value:
        state = build_transfer(model, cfg.seed)
    else:
        id_arrays = {k: params[k] for k in
                     ("id.dyn", "id.app", "id.geo", "id.offset")}
        state = restore_finetune(model, id_arrays)
    expect = {**model.params(), **state.params()}
    if set(expect) != set(params):
        missing = sorted(set(expect) - set(params))
        extra = sorted(set(params) - set(expect))
        raise ValueError(
            f"checkpoint does not match model: missing {missing}, extra {extra}")
    for name, p in expect.items():
        arr = np.asarray(params[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise ValueError(
                f"{name} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr
    return model, state, cfg, meta


# -- phase entry points ---------------------------------------------------------------


def pretrain(data_root: str, cfg: TrainConfig, out_dir: str, log=None):
    """Train shared model plus identity encoder and hypernet on all identities."""
    ds = load_dataset(data_root)
    model = build_model(cfg, d_a=ds.manifest.d_a)
    state = build_transfer(model, cfg.seed)
    ids = list(range(ds.manifest.n_ids))
    history = train_loop(model, state, ds, ids, cfg, out_dir, log=log)
    return model, state, history


def finetune(data_root: str, ckpt_path: str, frac: float, out_dir: str,
             cfg_overrides: dict = None, target_id: int = 0, log=None):
    """Adapt a pretrained checkpoint to one identity of ``data_root``.

    The identity encoder conditions on the new identity's first training
    frame, its outputs are materialized into trainable codes, and training
    continues on ``frac`` of the training frames.
    """
    if frac <= 0.0 or frac > 1.0:
        raise ValueError("frac must be in (0, 1]")
    ds = load_dataset(data_root)
    model, state, cfg, meta = build_from_checkpoint(ckpt_path)
    if state.phase is not TransferPhase.PRETRAIN:
        raise ValueError("finetune requires a pretraining checkpoint")
    if ds.manifest.d_a != meta["d_a"]:
        raise ValueError(
            f"dataset d_a {ds.manifest.d_a} != checkpoint d_a {meta['d_a']}")
    overrides = dict(cfg_overrides or {})
    overrides.setdefault("epochs", 10)
    overrides["frames_fraction"] = frac
    cfg = replace(cfg, **overrides)

    train_idx, _ = ds.split()
    ref = ds.frame(target_id, int(train_idx[0]))
    bundle = state.encode_identity(ref.image, ref.labels)
    state.finetune_init(bundle)
    history = train_loop(model, state, ds, [target_id], cfg, out_dir, log=log)
    return model, state, history


def ablate(data_root: str, out_dir: str, cfg_base: TrainConfig, log=None) -> dict:
    """Train all three architecture arms on the same data and compare.

    Returns per-variant validation PSNR and keypoint error, and writes
    ``ablation.json`` with the table.
    """
    os.makedirs(out_dir, exist_ok=True)
    ds = load_dataset(data_root)
    _, val_idx = ds.split()
    results = {}
    for variant in ("o", "od", "odr"):
        cfg = replace(cfg_base, variant=variant)
        arm_dir = os.path.join(out_dir, variant)
        if log is not None:
            log(f"=== training arm {variant} ===")
        model, state, history = pretrain(data_root, cfg, arm_dir, log=log)
        ref = ds.frame(0, 0)
        ctx = _eval_context(state, ref)
        rep = evaluate(model.detached(), ctx, ds, id_idx=0,
                       frame_indices=val_idx, n_samples=cfg.n_samples)
        results[variant] = {
            "psnr": rep.psnr_mean,
            "keypoint": rep.keypoint_mean,
            "steps": history["global_step"],
        }
        if log is not None:
            log(f"arm {variant}: PSNR {rep.psnr_mean:.2f} dB, "
                f"keypoint {rep.keypoint_mean:.2f} px")
    with open(os.path.join(out_dir, "ablation.json"), "w") as fh:
        json.dump(results, fh, indent=1, sort_keys=True)
    return results
