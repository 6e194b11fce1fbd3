"""Full portrait scene model: deformation cascade plus canonical radiance.

Three structural variants support the ablation protocol:

* ``o``    — no deformation; driving signals are concatenated straight into
             the radiance query.
* ``od``   — one monolithic deformation field conditioned on all signals.
* ``odr``  — region-specific cascaded fields with attention gates (full).

Observation-space sample points are normalized into the unit scene box,
warped (variants with deformation), then queried in canonical space.  An
optional identity context supplies per-identity features, the canonical
offset, and externally produced final layers for the deformation MLPs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .deform import DeformationModel, DrivingSignals, MonolithicField, SignalDims
from .hashenc import HashEncoder, HashGridSpec
from .radiance import RadianceField

VARIANTS = ("o", "od", "odr")
ID_DIM = 16

DEFORM_ENC = dict(levels=4, features_per_level=2, table_size_log2=12,
                  base_resolution=16, per_level_scale=1.382)
CANON_ENC = dict(levels=8, features_per_level=2, table_size_log2=16,
                 base_resolution=16, per_level_scale=1.382)


@dataclass
class IdentityContext:
    """Per-identity conditioning used by the with-identity model modes.

    ``face_last``/``torso_last`` override the deformation MLPs' final layers
    when set (the live hypernetwork path); when None the MLPs' own
    (materialized) parameters apply.
    """

    dyn: Tensor
    app: Tensor
    geo: Tensor
    offset: Tensor
    face_last: tuple = None
    torso_last: tuple = None
    mono_last: tuple = None


class PortraitModel:
    def __init__(self, dims: SignalDims, variant: str = "odr",
                 with_id: bool = False, seed: int = 0,
                 box_min=(-1.1, -1.1, -1.1), box_max=(1.1, 1.1, 1.1),
                 deform_enc: dict = None, canon_enc: dict = None):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.dims = dims
        self.variant = variant
        self.with_id = bool(with_id)
        self.seed = seed
        self.box_min = np.asarray(box_min, dtype=np.float64)
        self.box_max = np.asarray(box_max, dtype=np.float64)
        self.extent = self.box_max - self.box_min
        if np.any(self.extent <= 0):
            raise ValueError("scene box must have positive extent")
        id_dim = ID_DIM if with_id else 0

        de = dict(DEFORM_ENC)
        de.update(deform_enc or {})
        ce = dict(CANON_ENC)
        ce.update(canon_enc or {})

        signal_dim = dims.d_a + dims.d_e + dims.d_h if variant == "o" else 0
        self.radiance = RadianceField(
            HashGridSpec(seed=seed + 10, **ce), seed=seed + 20,
            id_dim=id_dim, signal_dim=signal_dim,
        )
        self.deform = None
        self.mono = None
        if variant == "odr":
            self.deform = DeformationModel(
                dims,
                HashGridSpec(seed=seed + 11, **de),
                HashGridSpec(seed=seed + 12, **de),
                seed=seed + 30, id_dim=id_dim,
            )
        elif variant == "od":
            self.mono = MonolithicField(
                dims, HashGridSpec(seed=seed + 11, **de),
                seed=seed + 30, id_dim=id_dim,
            )

    # -- coordinate handling ---------------------------------------------------

    def normalize(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.box_min) / self.extent

    # -- forward ---------------------------------------------------------------

    def forward_points(self, pts: np.ndarray, dirs: np.ndarray,
                       signals: DrivingSignals, id_ctx: IdentityContext = None):
        """Evaluate warped radiance at observation-space points.

        Returns (sigma (N, 1), color (N, 3), aux) where aux carries the
        per-point deformation and attention tensors the losses consume.
        """
        if self.with_id and id_ctx is None:
            raise ValueError("model was built with identity slots; id_ctx required")
        if not self.with_id and id_ctx is not None:
            raise ValueError("model has no identity slots; id_ctx must be None")
        if isinstance(pts, ad.Tensor):
            pts = pts.data
        if isinstance(dirs, ad.Tensor):
            dirs = dirs.data
        x01 = ad.constant(self.normalize(np.asarray(pts, dtype=np.float64)))
        aux: dict = {}
        offset = id_ctx.offset if id_ctx is not None else None
        dyn = id_ctx.dyn if id_ctx is not None else None
        geo = id_ctx.geo if id_ctx is not None else None
        app = id_ctx.app if id_ctx is not None else None

        signals_flat = None
        if self.variant == "o":
            signals.check_dims(self.dims)
            signals_flat = np.concatenate([signals.F_a, signals.F_e, signals.F_h])
            x_prime = x01
        elif self.variant == "od":
            x_prime, delta = self.mono.warp(
                x01, signals, id_dyn=dyn,
                last_layer=id_ctx.mono_last if id_ctx else None,
            )
            aux["delta"] = delta
        else:
            res = self.deform.warp(
                x01, signals, id_dyn=dyn,
                face_last=id_ctx.face_last if id_ctx else None,
                torso_last=id_ctx.torso_last if id_ctx else None,
            )
            x_prime = res.x_prime
            aux.update(delta_face=res.delta_face, delta_torso=res.delta_torso,
                       f_lip=res.f_lip, f_eye=res.f_eye, f_torso=res.f_torso)

        sigma, color = self.radiance.query(
            x_prime, dirs, geo=geo, app=app, offset=offset,
            signals_flat=signals_flat,
        )
        return sigma, color, aux

    def field_fn(self, signals: DrivingSignals, id_ctx: IdentityContext = None,
                 heat: bool = False):
        """Closure for the frame renderer; optional deformation-norm aux."""

        def fn(pts, dirs):
            sigma, color, aux = self.forward_points(pts, dirs, signals, id_ctx)
            out_aux = {}
            if heat:
                if "delta_face" in aux:
                    out_aux["face_heat"] = _norm_col(aux["delta_face"])
                    out_aux["torso_heat"] = _norm_col(aux["delta_torso"])
                    out_aux["lip_gate"] = aux["f_lip"]
                    out_aux["eye_gate"] = aux["f_eye"]
                    out_aux["torso_gate"] = aux["f_torso"]
                elif "delta" in aux:
                    out_aux["heat"] = _norm_col(aux["delta"])
            return sigma, color, out_aux

        return fn

    # -- parameter registry ------------------------------------------------------

    def params(self) -> dict:
        """Every trainable tensor, by stable hierarchical name."""
        out = {}
        out["radiance.enc.tables"] = self.radiance.encoder.tables
        _add_mlp(out, "radiance.density", self.radiance.density_mlp)
        _add_mlp(out, "radiance.color", self.radiance.color_mlp)
        if self.deform is not None:
            f, t = self.deform.face, self.deform.torso
            out["deform.face.enc.tables"] = f.encoder.tables
            out["deform.face.key_proj"] = f.key_proj
            out["deform.face.q_lip"] = f.q_lip
            out["deform.face.q_eye"] = f.q_eye
            _add_mlp(out, "deform.face.mlp", f.mlp)
            out["deform.torso.enc.tables"] = t.encoder.tables
            out["deform.torso.key_proj"] = t.key_proj
            out["deform.torso.q_torso"] = t.q_torso
            _add_mlp(out, "deform.torso.mlp", t.mlp)
        if self.mono is not None:
            out["deform.mono.enc.tables"] = self.mono.encoder.tables
            _add_mlp(out, "deform.mono.mlp", self.mono.mlp)
        return out

    def detached(self) -> "PortraitModel":
        """Same structure and values with gradient recording turned off."""
        clone = object.__new__(PortraitModel)
        clone.__dict__.update(self.__dict__)
        clone.radiance = copy.copy(self.radiance)
        clone.radiance.encoder = _detached_encoder(self.radiance.encoder)
        clone.radiance.density_mlp = [_frozen(p) for p in self.radiance.density_mlp]
        clone.radiance.color_mlp = [_frozen(p) for p in self.radiance.color_mlp]
        if self.deform is not None:
            clone.deform = copy.copy(self.deform)
            clone.deform.face = _detached_field(self.deform.face)
            clone.deform.torso = _detached_field(self.deform.torso)
        if self.mono is not None:
            clone.mono = copy.copy(self.mono)
            clone.mono.encoder = _detached_encoder(self.mono.encoder)
            clone.mono.mlp = [_frozen(p) for p in self.mono.mlp]
        return clone


def _norm_col(delta: Tensor) -> Tensor:
    n = ad.l2norm_lastaxis(delta)
    return ad.reshape(n, (n.size, 1))


def _add_mlp(out: dict, prefix: str, params: list) -> None:
    for i in range(0, len(params), 2):
        out[f"{prefix}.w{i // 2}"] = params[i]
        out[f"{prefix}.b{i // 2}"] = params[i + 1]


def _frozen(p: Tensor) -> Tensor:
    return Tensor(p.data)


def _detached_encoder(enc):
    return HashEncoder(enc.spec, tables=_frozen(enc.tables))


def _detached_field(field):
    clone = copy.copy(field)
    clone.encoder = _detached_encoder(field.encoder)
    clone.mlp = [_frozen(p) for p in field.mlp]
    clone.key_proj = _frozen(field.key_proj)
    for attr in ("q_lip", "q_eye", "q_torso"):
        if hasattr(field, attr):
            setattr(clone, attr, _frozen(getattr(field, attr)))
    return clone


def detached_context(ctx: IdentityContext) -> IdentityContext:
    if ctx is None:
        return None

    def det(pair):
        return None if pair is None else tuple(_frozen(t) for t in pair)

    return IdentityContext(_frozen(ctx.dyn), _frozen(ctx.app), _frozen(ctx.geo),
                           _frozen(ctx.offset), det(ctx.face_last),
                           det(ctx.torso_last), det(ctx.mono_last))
