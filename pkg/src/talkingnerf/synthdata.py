"""Deterministic synthetic multi-identity portrait scenes.

The world frame is the head frame: the head sphere never moves, eye disks
scale with the eye-openness signal, the lip ellipsoid opens linearly with
the first audio-motion component, and the torso counter-moves under the
inverse head pose through a stiffness coupling.  The per-frame camera is
the static real-world camera composed with the inverse head pose, so frames
look like a moving head filmed by a fixed camera.  All geometry is closed
form: ground-truth images are supersampled ray traces, masks are exact
center-sample labels, and keypoints project analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deform import DrivingSignals, SignalDims
from .render import Camera
from .rng import make_rng

SCENE_BOX_MIN = (-1.1, -1.1, -1.1)
SCENE_BOX_MAX = (1.1, 1.1, 1.1)
HEAD_CENTER = np.array([0.0, 0.22, 0.0])
BACKGROUND = (0.5, 0.5, 0.5)
LABELS = {"bg": 0, "torso": 1, "face": 2, "eye": 3, "lip": 4}

_T_FLOOR = 1e-3


@dataclass
class SyntheticIdentity:
    """Closed-form articulated blob figure, fully determined by its seed."""

    seed: int
    head_radius: float
    eye_offset: np.ndarray  # (2,) lateral/vertical placement factors
    eye_gain: float
    lip_offset: float
    lip_width: float
    lip_gain: float
    lip_thickness: float
    torso_center: np.ndarray
    torso_semi: np.ndarray
    stiffness: float
    pose_gain: float
    palette: dict = field(default_factory=dict)

    # -- derived geometry ------------------------------------------------------

    def eye_dirs(self) -> np.ndarray:
        ex, ey = self.eye_offset
        dirs = np.array([[-ex, ey, 1.0], [ex, ey, 1.0]])
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def eye_centers(self) -> np.ndarray:
        return HEAD_CENTER + self.eye_dirs() * self.head_radius

    def eye_radius(self, F_e) -> float:
        return float(self.eye_gain * np.asarray(F_e).reshape(-1)[0])

    def lip_center(self) -> np.ndarray:
        d = np.array([0.0, -self.lip_offset, 1.0])
        return HEAD_CENTER + d / np.linalg.norm(d) * self.head_radius

    def lip_semis(self, F_a) -> np.ndarray:
        return np.array([
            self.lip_width,
            lip_opening_height(self, F_a) / 2.0,
            self.lip_thickness,
        ])

    def keypoints3d(self, signals: DrivingSignals) -> dict:
        """Named scene-frame points, closed form in the driving signals."""
        eyes = self.eye_centers()
        lip_c = self.lip_center()
        lip_w = self.lip_width
        chin_dir = np.array([0.0, -0.88, 0.48])
        chin = HEAD_CENTER + chin_dir / np.linalg.norm(chin_dir) * self.head_radius
        r_m, t_m = torso_transform(self, signals.F_h)
        sh = np.array([
            [-self.torso_semi[0] * 0.85, self.torso_semi[1] * 0.35, 0.0],
            [self.torso_semi[0] * 0.85, self.torso_semi[1] * 0.35, 0.0],
        ]) + self.torso_center
        sh = sh @ r_m.T + t_m
        return {
            "eye_l": eyes[0], "eye_r": eyes[1],
            "lip_l": lip_c + np.array([-lip_w, 0.0, 0.0]),
            "lip_r": lip_c + np.array([lip_w, 0.0, 0.0]),
            "lip_c": lip_c,
            "chin": chin,
            "shoulder_l": sh[0], "shoulder_r": sh[1],
        }

    def to_json(self) -> dict:
        return {
            "seed": self.seed, "head_radius": self.head_radius,
            "eye_offset": self.eye_offset.tolist(), "eye_gain": self.eye_gain,
            "lip_offset": self.lip_offset, "lip_width": self.lip_width,
            "lip_gain": self.lip_gain, "lip_thickness": self.lip_thickness,
            "torso_center": self.torso_center.tolist(),
            "torso_semi": self.torso_semi.tolist(),
            "stiffness": self.stiffness, "pose_gain": self.pose_gain,
            "palette": {k: list(v) for k, v in self.palette.items()},
        }

    @staticmethod
    def from_json(obj: dict) -> "SyntheticIdentity":
        return SyntheticIdentity(
            seed=obj["seed"], head_radius=obj["head_radius"],
            eye_offset=np.asarray(obj["eye_offset"]), eye_gain=obj["eye_gain"],
            lip_offset=obj["lip_offset"], lip_width=obj["lip_width"],
            lip_gain=obj["lip_gain"], lip_thickness=obj["lip_thickness"],
            torso_center=np.asarray(obj["torso_center"]),
            torso_semi=np.asarray(obj["torso_semi"]),
            stiffness=obj["stiffness"], pose_gain=obj["pose_gain"],
            palette={k: tuple(v) for k, v in obj["palette"].items()},
        )


def lip_opening_height(identity: SyntheticIdentity, F_a) -> float:
    """Mouth opening, linear in the first audio-motion component."""
    a0 = float(np.asarray(F_a).reshape(-1)[0])
    return identity.lip_gain * max(a0, 0.0)


def generate_identity(seed: int) -> SyntheticIdentity:
    rng = make_rng(9001, seed)
    u = rng.uniform(size=12)
    palette = _make_palette(rng)
    return SyntheticIdentity(
        seed=seed,
        head_radius=0.30 + 0.05 * u[0],
        eye_offset=np.array([0.36 + 0.06 * u[1], 0.22 + 0.06 * u[2]]),
        eye_gain=0.12 + 0.02 * u[3],
        lip_offset=0.42 + 0.08 * u[4],
        lip_width=0.095 + 0.035 * u[5],
        lip_gain=0.09 + 0.05 * u[6],
        lip_thickness=0.035,
        torso_center=np.array([0.0, -0.50, 0.0]),
        torso_semi=np.array([0.42, 0.33, 0.26]) * (0.90 + 0.20 * u[8]),
        stiffness=0.55 + 0.25 * u[9],
        pose_gain=0.80 + 0.40 * u[10],
        palette=palette,
    )


def _make_palette(rng) -> dict:
    """Well-separated flat colors so rendered regions segment by color."""
    anchors = {
        "face": np.array([0.85, 0.62, 0.48]),
        "torso": np.array([0.20, 0.45, 0.70]),
        "eye": np.array([0.08, 0.12, 0.55]),
        "lip": np.array([0.75, 0.12, 0.18]),
    }
    bg = np.asarray(BACKGROUND)
    for _ in range(64):
        trial = {k: np.clip(v + rng.uniform(-0.12, 0.12, size=3), 0.02, 0.98)
                 for k, v in anchors.items()}
        colors = list(trial.values()) + [bg]
        dists = [np.linalg.norm(a - b)
                 for i, a in enumerate(colors) for b in colors[i + 1:]]
        if min(dists) > 0.22:
            return {k: tuple(float(x) for x in v) for k, v in trial.items()}
    # anchors themselves satisfy the separation bound
    return {k: tuple(float(x) for x in v) for k, v in anchors.items()}


# -- rigid motion ---------------------------------------------------------------


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a small-angle Taylor guard."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    kx, ky, kz = w
    k_cross = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    if theta < 1e-12:
        return np.eye(3) + k_cross
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k_cross + b * (k_cross @ k_cross)


def head_pose(F_h: np.ndarray, pose_gain: float):
    """Real-world head transform about the head center: (R, translation)."""
    F_h = np.asarray(F_h, dtype=np.float64)
    return rotvec_to_matrix(pose_gain * F_h[:3]), pose_gain * F_h[3:]


def frame_camera(base: Camera, F_h, pose_gain: float) -> Camera:
    """Static real-world camera expressed in the head frame."""
    r_h, tau = head_pose(F_h, pose_gain)
    a = np.eye(4)
    a[:3, :3] = r_h.T
    a[:3, 3] = HEAD_CENTER - r_h.T @ (HEAD_CENTER + tau)
    return Camera(base.fx, base.fy, base.cx, base.cy, a @ base.c2w)


def torso_transform(identity: SyntheticIdentity, F_h):
    """Head-frame torso motion: inverse head pose damped by stiffness."""
    r_h, tau = head_pose(F_h, identity.pose_gain)
    s = identity.stiffness
    r_s = rotvec_to_matrix(identity.pose_gain * s * np.asarray(F_h)[:3])
    r_m = r_h.T @ r_s
    t_m = HEAD_CENTER - r_m @ HEAD_CENTER + r_h.T @ ((s - 1.0) * tau)
    return r_m, t_m


def base_camera(width: int, height: int) -> Camera:
    eye = np.array([0.0, 0.02, 2.35])
    target = np.array([0.0, -0.10, 0.0])
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    z = -fwd
    x = np.cross(np.array([0.0, 1.0, 0.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x, y, z, eye
    f = 1.4 * max(width, height)
    return Camera(f, f, width / 2.0, height / 2.0, c2w)


# -- analytic ray tracing ---------------------------------------------------------


def _sphere_t(origins, dirs, center, radius):
    oc = origins - center
    b = np.einsum("ij,ij->i", dirs, oc)
    c0 = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - c0
    hit = disc > 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t = -b - sq
    t = np.where(hit & (t > _T_FLOOR), t, np.inf)
    return t


def _ellipsoid_t(origins, dirs, center, semis, r_m=None, t_m=None):
    if r_m is not None:
        origins = (origins - t_m) @ r_m
        dirs = dirs @ r_m
    op = (origins - center) / semis
    dp = dirs / semis
    a = np.einsum("ij,ij->i", dp, dp)
    b = np.einsum("ij,ij->i", dp, op)
    c0 = np.einsum("ij,ij->i", op, op) - 1.0
    disc = b * b - a * c0
    hit = disc > 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t = (-b - sq) / a
    t = np.where(hit & (t > _T_FLOOR), t, np.inf)
    return t


def trace_rays(identity: SyntheticIdentity, signals: DrivingSignals,
               origins: np.ndarray, dirs: np.ndarray):
    """Nearest-hit distances and labels for a batch of rays."""
    n = origins.shape[0]
    ts = [np.full(n, np.inf)]
    labels = [LABELS["bg"]]

    r_eye = identity.eye_radius(signals.F_e)
    if r_eye > 0.0:
        for c in identity.eye_centers():
            ts.append(_sphere_t(origins, dirs, c, r_eye))
            labels.append(LABELS["eye"])
    semis = identity.lip_semis(signals.F_a)
    if semis[1] > 0.0:
        ts.append(_ellipsoid_t(origins, dirs, identity.lip_center(), semis))
        labels.append(LABELS["lip"])
    ts.append(_sphere_t(origins, dirs, HEAD_CENTER, identity.head_radius))
    labels.append(LABELS["face"])
    r_m, t_m = torso_transform(identity, signals.F_h)
    ts.append(_ellipsoid_t(origins, dirs, identity.torso_center,
                           identity.torso_semi, r_m, t_m))
    labels.append(LABELS["torso"])

    stack = np.stack(ts)  # (P, N)
    best = np.argmin(stack, axis=0)
    t_hit = stack[best, np.arange(n)]
    label = np.asarray(labels, dtype=np.uint8)[best]
    label = np.where(np.isfinite(t_hit), label, LABELS["bg"]).astype(np.uint8)
    return t_hit, label


def _pixel_dirs(camera: Camera, width, height, off_x, off_y):
    u = (np.arange(width) + off_x - camera.cx) / camera.fx
    v = (np.arange(height) + off_y - camera.cy) / camera.fy
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([uu, -vv, -np.ones_like(uu)], axis=-1).reshape(-1, 3)
    d = d_cam @ camera.c2w[:3, :3].T
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def render_gt_frame(identity: SyntheticIdentity, signals: DrivingSignals,
                    camera: Camera, width: int, height: int,
                    bg_color=BACKGROUND, supersample: int = 2):
    """Analytic raster: (image (H,W,3), labels (H,W) uint8, keypoints2d)."""
    bg = np.asarray(bg_color, dtype=np.float64)
    lut = np.empty((5, 3))
    lut[LABELS["bg"]] = bg
    lut[LABELS["torso"]] = identity.palette["torso"]
    lut[LABELS["face"]] = identity.palette["face"]
    lut[LABELS["eye"]] = identity.palette["eye"]
    lut[LABELS["lip"]] = identity.palette["lip"]

    origin = camera.c2w[:3, 3]
    n = width * height
    img = np.zeros((n, 3))
    offs = (np.arange(supersample) + 0.5) / supersample
    for ox in offs:
        for oy in offs:
            dirs = _pixel_dirs(camera, width, height, ox, oy)
            _, label = trace_rays(identity, signals,
                                  np.broadcast_to(origin, dirs.shape), dirs)
            img += lut[label]
    img /= supersample * supersample

    dirs_c = _pixel_dirs(camera, width, height, 0.5, 0.5)
    _, labels = trace_rays(identity, signals,
                           np.broadcast_to(origin, dirs_c.shape), dirs_c)
    kp3d = identity.keypoints3d(signals)
    kp2d = {k: project(camera, v[None, :])[0] for k, v in kp3d.items()}
    return (img.reshape(height, width, 3),
            labels.reshape(height, width), kp2d)


def project(camera: Camera, pts: np.ndarray) -> np.ndarray:
    """World points -> continuous pixel coordinates (u, v).

    Integer pixel (row v, col u) covers [u, u+1) x [v, v+1); its center maps
    to (u + 0.5, v + 0.5), matching the renderer's ray convention.
    """
    r = camera.c2w[:3, :3]
    t = camera.c2w[:3, 3]
    p_cam = (np.asarray(pts, dtype=np.float64) - t) @ r
    z = -p_cam[:, 2]
    if np.any(z <= 0):
        raise ValueError("point behind the camera")
    u = camera.fx * p_cam[:, 0] / z + camera.cx
    v = camera.cy - camera.fy * p_cam[:, 1] / z
    return np.stack([u, v], axis=1)


# -- driving-signal tracks --------------------------------------------------------


def gen_signals(n_frames: int, dims: SignalDims, rng) -> list:
    """Deterministic per-frame driving signals.

    F_a: smooth mean-reverting walk; component 0 (non-negative) drives the
    lips, the rest are distractors.  F_e: blink train with exact-zero closed
    frames.  F_h: low-frequency sinusoidal pose.
    """
    f_a = np.zeros((n_frames, dims.d_a))
    x = np.zeros(dims.d_a)
    x[0] = 0.55
    for t in range(n_frames):
        x = x + 0.15 * (np.r_[0.55, np.zeros(dims.d_a - 1)] - x)
        x = x + rng.normal(scale=0.10, size=dims.d_a)
        x[0] = np.clip(x[0], 0.05, 1.0)
        x[1:] = np.clip(x[1:], -1.0, 1.0)
        f_a[t] = x

    e_base = rng.uniform(0.55, 0.70)
    f_e = np.full(n_frames, e_base)
    t = int(rng.integers(8, 20))
    while t < n_frames - 3:
        f_e[t] = e_base * 0.4
        f_e[t + 1] = 0.0
        f_e[t + 2] = 0.0
        f_e[t + 3] = e_base * 0.4
        t += int(rng.integers(18, 32))

    amp_r = rng.uniform(0.10, 0.20, size=3)
    amp_t = rng.uniform(0.03, 0.07, size=3)
    freq = rng.uniform(1.0, 2.5, size=6)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=6)
    tt = np.arange(n_frames) / max(n_frames, 1)
    f_h = np.concatenate([amp_r, amp_t]) * np.sin(
        2.0 * np.pi * freq * tt[:, None] + phase
    )

    return [
        DrivingSignals(f_a[i], [f_e[i]], f_h[i]) for i in range(n_frames)
    ]
