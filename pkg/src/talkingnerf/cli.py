"""Command-line interface.

Subcommands: synth-gen, pretrain, finetune, render, eval, ablate,
gradcheck.  All errors exit nonzero with a one-line message on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import imgio
from .dataset import load_dataset, validate_dataset, write_dataset
from .deform import DrivingSignals
from .evaluate import evaluate
from .idtransfer import TransferPhase
from .model import detached_context
from .render import Camera, render_frame
from .selfcheck import run_selfcheck
from .synthdata import SCENE_BOX_MAX, SCENE_BOX_MIN, base_camera
from .train import (TrainConfig, ablate, build_from_checkpoint, finetune,
                    pretrain)


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError as e:
        raise argparse.ArgumentTypeError(
            f"size must look like 64x64, got {text!r}") from e
    if w < 4 or h < 4:
        raise argparse.ArgumentTypeError("size must be at least 4x4")
    return w, h


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="talkingnerf",
        description="Synthetic talking-portrait radiance-field trainer.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    g.add_argument("--ids", type=int, required=True)
    g.add_argument("--frames", type=int, required=True)
    g.add_argument("--size", type=_parse_size, required=True,
                   help="WxH, e.g. 64x64")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--d-a", type=int, default=32,
                   help="audio-motion feature dimension")

    t = sub.add_parser("pretrain", help="train on all dataset identities")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON file of training-config overrides")
    t.add_argument("--out", required=True)

    f = sub.add_parser("finetune", help="adapt a checkpoint to one identity")
    f.add_argument("--data", required=True)
    f.add_argument("--ckpt", required=True)
    f.add_argument("--frac", type=float, default=1.0,
                   help="fraction of training frames to use")
    f.add_argument("--out", required=True)
    f.add_argument("--id", type=int, default=0, dest="target_id")
    f.add_argument("--config", help="JSON file of training-config overrides")

    r = sub.add_parser("render", help="render frames from a signals file")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--signals", required=True,
                   help="JSON: {width, height, frames: [{F_a, F_e, F_h, camera?}]}")
    r.add_argument("--out", required=True)
    r.add_argument("--depth", action="store_true",
                   help="also write 16-bit depth maps")
    r.add_argument("--heatmap", action="store_true",
                   help="also write deformation heat maps")
    r.add_argument("--data", help="dataset for the identity reference frame "
                                  "(pretraining checkpoints only)")
    r.add_argument("--id", type=int, default=0, dest="ref_id")
    r.add_argument("--samples", type=int, default=32)

    e = sub.add_parser("eval", help="PSNR and keypoint metrics on a split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val"), default="val")
    e.add_argument("--json", dest="json_out",
                   help="write the report to this file instead of stdout")
    e.add_argument("--id", type=int, default=0, dest="eval_id")
    e.add_argument("--samples", type=int, default=32)

    a = sub.add_parser("ablate", help="train and compare all model variants")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", help="JSON file of training-config overrides")

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--module", help="run a single named check")
    c.add_argument("--elements", type=int, default=4,
                   help="elements checked per parameter")
    return p


def _load_config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    with open(path) as fh:
        return TrainConfig.from_json(json.load(fh))


def _context_for(model, state, data_root, ref_id):
    """Identity conditioning for a loaded checkpoint, detached."""
    if state.phase is not TransferPhase.PRETRAIN:
        return detached_context(state.context())
    if data_root is None:
        raise ValueError(
            "a pretraining checkpoint needs --data (and --id) to encode "
            "the identity reference frame")
    ds = load_dataset(data_root)
    train_idx, _ = ds.split()
    ref = ds.frame(ref_id, int(train_idx[0]))
    bundle = state.encode_identity(ref.image, ref.labels)
    return detached_context(bundle.context())


def _cmd_synth_gen(args) -> int:
    w, h = args.size
    last = {"id": -1}

    def progress(i, f):
        if i != last["id"]:
            print(f"identity {i} ...", flush=True)
            last["id"] = i

    write_dataset(args.out, n_ids=args.ids, n_frames=args.frames,
                  width=w, height=h, seed=args.seed, d_a=args.d_a,
                  progress=progress)
    validate_dataset(args.out)
    print(f"wrote {args.ids} identities x {args.frames} frames to {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _load_config(args.config)
    _, _, history = pretrain(args.data, cfg, args.out, log=print)
    ev = history["eval"][-1] if history["eval"] else {}
    print(f"done: {history['global_step']} steps, "
          f"final val PSNR {ev.get('val_psnr', float('nan')):.2f} dB, "
          f"checkpoint {os.path.join(args.out, 'ckpt_latest.loki')}")
    return 0


def _cmd_finetune(args) -> int:
    overrides = None
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    _, _, history = finetune(args.data, args.ckpt, args.frac, args.out,
                             cfg_overrides=overrides,
                             target_id=args.target_id, log=print)
    ev = history["eval"][-1] if history["eval"] else {}
    print(f"done: {history['global_step']} steps, "
          f"final val PSNR {ev.get('val_psnr', float('nan')):.2f} dB, "
          f"checkpoint {os.path.join(args.out, 'ckpt_latest.loki')}")
    return 0


def _cmd_render(args) -> int:
    model, state, cfg, meta = build_from_checkpoint(args.ckpt)
    ctx = _context_for(model, state, args.data, args.ref_id)
    det = model.detached()
    with open(args.signals) as fh:
        spec = json.load(fh)
    width, height = int(spec["width"]), int(spec["height"])
    bg = tuple(spec.get("bg_color", meta["bg_color"]))
    default_cam = base_camera(width, height)
    os.makedirs(args.out, exist_ok=True)
    for i, frame in enumerate(spec["frames"]):
        sig = DrivingSignals(np.asarray(frame["F_a"], dtype=np.float64),
                             np.asarray(frame["F_e"], dtype=np.float64),
                             np.asarray(frame["F_h"], dtype=np.float64))
        cam = (Camera.from_json(frame["camera"]) if "camera" in frame
               else default_cam)
        img, alpha, depth, aux = render_frame(
            det.field_fn(sig, ctx, heat=args.heatmap), cam, width, height,
            SCENE_BOX_MIN, SCENE_BOX_MAX, bg,
            n_samples=args.samples, want_aux=args.heatmap)
        imgio.write_ppm(os.path.join(args.out, f"frame_{i:05d}.ppm"), img)
        if args.depth:
            imgio.write_pgm(os.path.join(args.out, f"depth_{i:05d}.pgm"),
                            imgio.scale_to_u16(depth), maxval=65535)
        if args.heatmap:
            for name, hmap in sorted(aux.items()):
                imgio.write_pgm(
                    os.path.join(args.out, f"{name}_{i:05d}.pgm"),
                    imgio.scale_to_u16(hmap), maxval=65535)
        print(f"frame {i + 1}/{len(spec['frames'])}", flush=True)
    return 0


def _cmd_eval(args) -> int:
    model, state, cfg, meta = build_from_checkpoint(args.ckpt)
    ctx = _context_for(model, state, args.data, args.eval_id)
    ds = load_dataset(args.data)
    rep = evaluate(model.detached(), ctx, ds, id_idx=args.eval_id,
                   split=args.split, n_samples=args.samples)
    text = rep.dumps()
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.json_out}")
    else:
        print(text)
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    results = ablate(args.data, args.out, cfg, log=print)
    print(json.dumps(results, indent=1, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    ok, _ = run_selfcheck(module=args.module,
                          elements_per_param=args.elements, log=print)
    return 0 if ok else 1


_COMMANDS = {
    "synth-gen": _cmd_synth_gen,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
