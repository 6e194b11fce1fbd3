"""Dataset generation, on-disk layout, loading, and validation.

Layout under a dataset root::

    manifest.json                 global settings plus per-identity geometry
    id<N>/frames/<%05d>.ppm       ground-truth color frames
    id<N>/masks/<%05d>.pgm        per-pixel region labels (0..4)
    id<N>/signals.json            per-frame driving signals
    id<N>/cameras.json            per-frame camera (head-frame pose)
    id<N>/keypoints.json          per-frame analytic 2D keypoints

Frames split 10:1 into train and validation by index; the validation
block is the tail of the sequence.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import imgio
from .deform import DrivingSignals, SignalDims
from .render import Camera
from .rng import make_rng
from .synthdata import (BACKGROUND, SyntheticIdentity, base_camera,
                        frame_camera, gen_signals, generate_identity,
                        render_gt_frame)

FORMAT_VERSION = 1


@dataclass
class DatasetManifest:
    n_ids: int
    n_frames: int
    width: int
    height: int
    seed: int
    d_a: int
    bg_color: tuple
    identities: list  # SyntheticIdentity JSON dicts, index-aligned

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "n_ids": self.n_ids, "n_frames": self.n_frames,
            "width": self.width, "height": self.height,
            "seed": self.seed, "d_a": self.d_a,
            "bg_color": list(self.bg_color),
            "identities": self.identities,
        }

    @staticmethod
    def from_json(obj: dict) -> "DatasetManifest":
        if obj.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported dataset format_version {obj.get('format_version')}"
            )
        return DatasetManifest(
            n_ids=obj["n_ids"], n_frames=obj["n_frames"],
            width=obj["width"], height=obj["height"],
            seed=obj["seed"], d_a=obj["d_a"],
            bg_color=tuple(obj["bg_color"]),
            identities=obj["identities"],
        )

    @property
    def signal_dims(self) -> SignalDims:
        return SignalDims(d_a=self.d_a, d_e=1, d_h=6)


def train_val_split(n_frames: int):
    """10:1 split by frame index; validation is the tail block."""
    n_val = max(1, n_frames // 11)
    idx = np.arange(n_frames)
    return idx[: n_frames - n_val], idx[n_frames - n_val:]


def write_dataset(out_dir: str, n_ids: int, n_frames: int, width: int,
                  height: int, seed: int, d_a: int = 32,
                  progress=None) -> DatasetManifest:
    """Generate and write a complete synthetic dataset."""
    if n_ids < 1 or n_frames < 2:
        raise ValueError("need at least 1 identity and 2 frames")
    os.makedirs(out_dir, exist_ok=True)
    dims = SignalDims(d_a=d_a, d_e=1, d_h=6)
    cam0 = base_camera(width, height)
    identities = []
    for i in range(n_ids):
        ident = generate_identity(seed + 7919 * i)
        identities.append(ident.to_json())
        sigs = gen_signals(n_frames, dims, make_rng(seed, 17, i))
        id_dir = os.path.join(out_dir, f"id{i}")
        os.makedirs(os.path.join(id_dir, "frames"), exist_ok=True)
        os.makedirs(os.path.join(id_dir, "masks"), exist_ok=True)

        cams, kps = [], []
        sig_json = {"F_a": [], "F_e": [], "F_h": []}
        for f, sig in enumerate(sigs):
            cam = frame_camera(cam0, sig.F_h, ident.pose_gain)
            img, labels, kp2d = render_gt_frame(
                ident, sig, cam, width, height, bg_color=BACKGROUND)
            imgio.write_ppm(os.path.join(id_dir, "frames", f"{f:05d}.ppm"), img)
            imgio.write_pgm(os.path.join(id_dir, "masks", f"{f:05d}.pgm"),
                            labels, maxval=255)
            cams.append(cam.to_json())
            kps.append({k: [float(v[0]), float(v[1])] for k, v in kp2d.items()})
            sig_json["F_a"].append(sig.F_a.tolist())
            sig_json["F_e"].append(sig.F_e.tolist())
            sig_json["F_h"].append(sig.F_h.tolist())
            if progress is not None:
                progress(i, f)

        with open(os.path.join(id_dir, "signals.json"), "w") as fh:
            json.dump(sig_json, fh)
        with open(os.path.join(id_dir, "cameras.json"), "w") as fh:
            json.dump(cams, fh)
        with open(os.path.join(id_dir, "keypoints.json"), "w") as fh:
            json.dump(kps, fh)

    manifest = DatasetManifest(
        n_ids=n_ids, n_frames=n_frames, width=width, height=height,
        seed=seed, d_a=d_a, bg_color=BACKGROUND, identities=identities,
    )
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest.to_json(), fh, indent=1, sort_keys=True)
    return manifest


@dataclass
class FrameRecord:
    image: np.ndarray   # (H, W, 3) float in [0, 1]
    labels: np.ndarray  # (H, W) uint8 region ids
    signals: DrivingSignals
    camera: Camera
    keypoints: dict     # name -> (2,) float array


class Dataset:
    """Loaded dataset with per-frame access and an in-memory frame cache."""

    def __init__(self, root: str):
        manifest_path = os.path.join(root, "manifest.json")
        if not os.path.isfile(manifest_path):
            raise FileNotFoundError(f"missing {manifest_path}")
        with open(manifest_path) as fh:
            self.manifest = DatasetManifest.from_json(json.load(fh))
        self.root = root
        self._meta: dict = {}
        self._cache: dict = {}

    def identity(self, id_idx: int) -> SyntheticIdentity:
        return SyntheticIdentity.from_json(self.manifest.identities[id_idx])

    def _load_meta(self, id_idx: int):
        if id_idx in self._meta:
            return self._meta[id_idx]
        id_dir = os.path.join(self.root, f"id{id_idx}")
        with open(os.path.join(id_dir, "signals.json")) as fh:
            sig = json.load(fh)
        with open(os.path.join(id_dir, "cameras.json")) as fh:
            cams = json.load(fh)
        with open(os.path.join(id_dir, "keypoints.json")) as fh:
            kps = json.load(fh)
        self._meta[id_idx] = (sig, cams, kps)
        return self._meta[id_idx]

    def frame(self, id_idx: int, frame_idx: int, cache: bool = True) -> FrameRecord:
        key = (id_idx, frame_idx)
        if cache and key in self._cache:
            return self._cache[key]
        if not 0 <= id_idx < self.manifest.n_ids:
            raise IndexError(f"identity {id_idx} out of range")
        if not 0 <= frame_idx < self.manifest.n_frames:
            raise IndexError(f"frame {frame_idx} out of range")
        id_dir = os.path.join(self.root, f"id{id_idx}")
        image = imgio.read_ppm(
            os.path.join(id_dir, "frames", f"{frame_idx:05d}.ppm"))
        labels = imgio.read_pgm(
            os.path.join(id_dir, "masks", f"{frame_idx:05d}.pgm"))
        sig, cams, kps = self._load_meta(id_idx)
        rec = FrameRecord(
            image=image,
            labels=labels.astype(np.uint8),
            signals=DrivingSignals(
                np.asarray(sig["F_a"][frame_idx]),
                np.asarray(sig["F_e"][frame_idx]),
                np.asarray(sig["F_h"][frame_idx]),
            ),
            camera=Camera.from_json(cams[frame_idx]),
            keypoints={k: np.asarray(v) for k, v in kps[frame_idx].items()},
        )
        if cache:
            self._cache[key] = rec
        return rec

    def split(self):
        return train_val_split(self.manifest.n_frames)


def load_dataset(root: str) -> Dataset:
    return Dataset(root)


def validate_dataset(root: str) -> None:
    """Raise with the offending path if any expected file is missing or bad."""
    ds = Dataset(root)
    m = ds.manifest
    if len(m.identities) != m.n_ids:
        raise ValueError(
            f"manifest lists {len(m.identities)} identities, expected {m.n_ids}"
        )
    for i in range(m.n_ids):
        id_dir = os.path.join(root, f"id{i}")
        for sub in ("signals.json", "cameras.json", "keypoints.json"):
            p = os.path.join(id_dir, sub)
            if not os.path.isfile(p):
                raise FileNotFoundError(f"missing {p}")
        sig, cams, kps = ds._load_meta(i)
        for field in ("F_a", "F_e", "F_h"):
            if len(sig[field]) != m.n_frames:
                raise ValueError(
                    f"{id_dir}/signals.json {field} has {len(sig[field])} "
                    f"entries, expected {m.n_frames}"
                )
        if len(cams) != m.n_frames or len(kps) != m.n_frames:
            raise ValueError(f"{id_dir} camera/keypoint count mismatch")
        for f in range(m.n_frames):
            fp = os.path.join(id_dir, "frames", f"{f:05d}.ppm")
            mp = os.path.join(id_dir, "masks", f"{f:05d}.pgm")
            if not os.path.isfile(fp):
                raise FileNotFoundError(f"missing {fp}")
            if not os.path.isfile(mp):
                raise FileNotFoundError(f"missing {mp}")
        # decode one frame per identity to catch content corruption early
        rec = ds.frame(i, 0, cache=False)
        if rec.image.shape != (m.height, m.width, 3):
            raise ValueError(
                f"{id_dir}/frames/00000.ppm has shape {rec.image.shape}, "
                f"expected ({m.height}, {m.width}, 3)"
            )
        if rec.labels.max() > 4:
            raise ValueError(f"{id_dir}/masks/00000.pgm has labels above 4")
