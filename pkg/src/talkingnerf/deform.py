"""Region-specific cascaded deformation fields.

Two fields warp observation-space sample points into a shared canonical
space.  The face field consumes the audio-motion and eye signals, each
scaled by a per-point cross-attention gate; the torso field consumes the
head pose (also gated) plus the face field's own output at the same point,
so torso gradients flow back through the face branch.  Both fields end in a
zero-initialized linear layer, making the initial warp the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hashenc import HashEncoder, HashGridSpec
from .nn import MlpSpec, init_mlp, mlp_forward, zero_last_layer
from .rng import make_rng

ATT_DIM = 16
HIDDEN = 64


@dataclass(frozen=True)
class SignalDims:
    """Driving-signal dimensions fixed by the dataset manifest."""

    d_a: int = 32
    d_e: int = 1
    d_h: int = 6

    def __post_init__(self):
        if self.d_a < 1 or self.d_e < 1:
            raise ValueError("signal dimensions must be positive")
        if self.d_h != 6:
            raise ValueError(f"head pose must be 6-dimensional, got {self.d_h}")


class DrivingSignals:
    """Per-frame conditioning: audio-motion F_a, eye openness F_e, head pose F_h."""

    __slots__ = ("F_a", "F_e", "F_h")

    def __init__(self, F_a, F_e, F_h):
        self.F_a = np.atleast_1d(np.asarray(F_a, dtype=np.float64))
        self.F_e = np.atleast_1d(np.asarray(F_e, dtype=np.float64))
        self.F_h = np.asarray(F_h, dtype=np.float64)
        if self.F_h.shape != (6,):
            raise ValueError(f"F_h must have shape (6,), got {self.F_h.shape}")
        for name, v in (("F_a", self.F_a), ("F_e", self.F_e), ("F_h", self.F_h)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(self.F_e < 0.0):
            raise ValueError("F_e is an eye-openness ratio and must be >= 0")

    def check_dims(self, dims: SignalDims) -> None:
        if self.F_a.shape != (dims.d_a,):
            raise ValueError(f"F_a has shape {self.F_a.shape}, manifest says ({dims.d_a},)")
        if self.F_e.shape != (dims.d_e,):
            raise ValueError(f"F_e has shape {self.F_e.shape}, manifest says ({dims.d_e},)")


@dataclass
class DeformationResult:
    """Per-point warp decomposition: x' = x + delta_face + delta_torso."""

    delta_face: Tensor
    delta_torso: Tensor
    x_prime: Tensor
    f_lip: Tensor
    f_eye: Tensor
    f_torso: Tensor


def _init_gate_query(seed_parts) -> Tensor:
    bound = 1.0 / np.sqrt(ATT_DIM)
    rng = make_rng(*seed_parts)
    return ad.param(rng.uniform(-bound, bound, size=(ATT_DIM,)))


def _init_key_proj(enc_dim: int, seed_parts) -> Tensor:
    bound = 1.0 / np.sqrt(enc_dim)
    rng = make_rng(*seed_parts)
    return ad.param(rng.uniform(-bound, bound, size=(enc_dim, ATT_DIM)))


def attention_score(enc_feat: Tensor, key_proj: Tensor, query: Tensor) -> Tensor:
    """sigmoid(<q, k(x)> / sqrt(d)) per point, in (0, 1)."""
    k = ad.matmul(enc_feat, key_proj)  # (N, d)
    q = ad.reshape(query, (ATT_DIM, 1))
    logits = ad.matmul(k, q)  # (N, 1)
    return ad.sigmoid(ad.mul(logits, ad.constant(1.0 / np.sqrt(ATT_DIM))))


def _scaled_signal(signal: np.ndarray, score: Tensor) -> Tensor:
    """Broadcast a per-frame signal to points, scaled by the per-point score."""
    return ad.mul(score, ad.constant(signal[None, :]))


class FaceField:
    """delta_face = MLP(enc(x); F_a*f_lip, F_e*f_eye [, id_dyn])."""

    def __init__(self, dims: SignalDims, enc_spec: HashGridSpec, seed: int,
                 id_dim: int = 0):
        self.dims = dims
        self.id_dim = id_dim
        self.encoder = HashEncoder(enc_spec)
        self.key_proj = _init_key_proj(enc_spec.output_dim, (seed, 101))
        self.q_lip = _init_gate_query((seed, 102))
        self.q_eye = _init_gate_query((seed, 103))
        in_dim = enc_spec.output_dim + dims.d_a + dims.d_e + id_dim
        self.mlp_spec = MlpSpec(
            (in_dim, HIDDEN, HIDDEN, HIDDEN, 3),
            ("relu", "relu", "relu", "none"),
            seed=seed,
        )
        self.mlp = init_mlp(self.mlp_spec)
        zero_last_layer(self.mlp)

    def __call__(self, x: Tensor, signals: DrivingSignals, id_dyn: Tensor = None,
                 last_layer=None):
        signals.check_dims(self.dims)
        if (id_dyn is None) != (self.id_dim == 0):
            raise ValueError("id_dyn presence must match the field's id_dim")
        feat = self.encoder.encode(x)
        f_lip = attention_score(feat, self.key_proj, self.q_lip)
        f_eye = attention_score(feat, self.key_proj, self.q_eye)
        parts = [feat, _scaled_signal(signals.F_a, f_lip),
                 _scaled_signal(signals.F_e, f_eye)]
        if id_dyn is not None:
            parts.append(_broadcast_rows(id_dyn, x.shape[0]))
        h = ad.concat(parts, axis=-1)
        delta = mlp_forward(self.mlp_spec, self.mlp, h, last_layer=last_layer)
        return delta, f_lip, f_eye


class TorsoField:
    """delta_torso = MLP(enc(x); F_h*f_torso, delta_face [, id_dyn])."""

    def __init__(self, dims: SignalDims, enc_spec: HashGridSpec, seed: int,
                 id_dim: int = 0):
        self.dims = dims
        self.id_dim = id_dim
        self.encoder = HashEncoder(enc_spec)
        self.key_proj = _init_key_proj(enc_spec.output_dim, (seed, 104))
        self.q_torso = _init_gate_query((seed, 105))
        in_dim = enc_spec.output_dim + dims.d_h + 3 + id_dim
        self.mlp_spec = MlpSpec(
            (in_dim, HIDDEN, HIDDEN, HIDDEN, 3),
            ("relu", "relu", "relu", "none"),
            seed=seed,
        )
        self.mlp = init_mlp(self.mlp_spec)
        zero_last_layer(self.mlp)

    def __call__(self, x: Tensor, signals: DrivingSignals, delta_face: Tensor,
                 id_dyn: Tensor = None, last_layer=None):
        if delta_face.shape != (x.shape[0], 3):
            raise ValueError(
                f"delta_face shape {delta_face.shape} does not match points "
                f"({x.shape[0]}, 3)"
            )
        if (id_dyn is None) != (self.id_dim == 0):
            raise ValueError("id_dyn presence must match the field's id_dim")
        feat = self.encoder.encode(x)
        f_torso = attention_score(feat, self.key_proj, self.q_torso)
        parts = [feat, _scaled_signal(signals.F_h, f_torso), delta_face]
        if id_dyn is not None:
            parts.append(_broadcast_rows(id_dyn, x.shape[0]))
        h = ad.concat(parts, axis=-1)
        delta = mlp_forward(self.mlp_spec, self.mlp, h, last_layer=last_layer)
        return delta, f_torso


def _broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Tile a (1, D) or (D,) tensor to (n, D) differentiably."""
    row = ad.reshape(v, (1, v.size))
    return ad.mul(row, ad.constant(np.ones((n, 1))))


class DeformationModel:
    """Cascade of the two fields; the composed warp targets canonical space."""

    def __init__(self, dims: SignalDims, face_enc: HashGridSpec,
                 torso_enc: HashGridSpec, seed: int, id_dim: int = 0):
        self.face = FaceField(dims, face_enc, seed=seed + 1, id_dim=id_dim)
        self.torso = TorsoField(dims, torso_enc, seed=seed + 2, id_dim=id_dim)

    def warp(self, x: Tensor, signals: DrivingSignals, id_dyn: Tensor = None,
             face_last=None, torso_last=None) -> DeformationResult:
        delta_face, f_lip, f_eye = self.face(x, signals, id_dyn, last_layer=face_last)
        delta_torso, f_torso = self.torso(
            x, signals, delta_face, id_dyn, last_layer=torso_last
        )
        x_prime = ad.add(x, ad.add(delta_face, delta_torso))
        return DeformationResult(delta_face, delta_torso, x_prime,
                                 f_lip, f_eye, f_torso)


class MonolithicField:
    """Single ungated field on all signals (the O+D ablation arm)."""

    def __init__(self, dims: SignalDims, enc_spec: HashGridSpec, seed: int,
                 id_dim: int = 0):
        self.dims = dims
        self.id_dim = id_dim
        self.encoder = HashEncoder(enc_spec)
        in_dim = enc_spec.output_dim + dims.d_a + dims.d_e + dims.d_h + id_dim
        self.mlp_spec = MlpSpec(
            (in_dim, HIDDEN, HIDDEN, HIDDEN, 3),
            ("relu", "relu", "relu", "none"),
            seed=seed,
        )
        self.mlp = init_mlp(self.mlp_spec)
        zero_last_layer(self.mlp)

    def warp(self, x: Tensor, signals: DrivingSignals, id_dyn: Tensor = None,
             last_layer=None):
        signals.check_dims(self.dims)
        if (id_dyn is None) != (self.id_dim == 0):
            raise ValueError("id_dyn presence must match the field's id_dim")
        feat = self.encoder.encode(x)
        n = x.shape[0]
        sig = np.concatenate([signals.F_a, signals.F_e, signals.F_h])
        parts = [feat, ad.constant(np.broadcast_to(sig, (n, sig.size)).copy())]
        if id_dyn is not None:
            parts.append(_broadcast_rows(id_dyn, n))
        h = ad.concat(parts, axis=-1)
        delta = mlp_forward(self.mlp_spec, self.mlp, h, last_layer=last_layer)
        return ad.add(x, delta), delta
