"""Canonical-space radiance field.

Hash-encoded canonical coordinates (optionally shifted by a per-identity
canonical offset) feed a density decoder whose first output channel becomes
the volume density through softplus; the remaining channels form a geometry
bottleneck that joins the frequency-encoded view direction (and optional
identity appearance features) in the color decoder, whose sigmoid output is
the emitted color.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hashenc import HashEncoder, HashGridSpec
from .nn import MlpSpec, init_mlp, mlp_forward

HIDDEN = 64
BOTTLENECK = 15
DIR_FREQS = 4
DIR_ENC_DIM = 3 * 2 * DIR_FREQS


def encode_direction(d: np.ndarray) -> np.ndarray:
    """Sinusoidal features at frequencies 2^0 .. 2^(DIR_FREQS-1) per axis."""
    scaled = d[..., None, :] * (2.0 ** np.arange(DIR_FREQS))[:, None]
    feats = np.concatenate([np.sin(scaled), np.cos(scaled)], axis=-1)
    return feats.reshape(d.shape[0], DIR_ENC_DIM)


class RadianceField:
    """Implicit map (x', d) -> (color, density) over the shared canonical space."""

    def __init__(self, enc_spec: HashGridSpec, seed: int, id_dim: int = 0,
                 signal_dim: int = 0):
        self.id_dim = id_dim
        self.signal_dim = signal_dim
        self.encoder = HashEncoder(enc_spec)
        self.density_spec = MlpSpec(
            (enc_spec.output_dim + id_dim + signal_dim, HIDDEN, HIDDEN, 1 + BOTTLENECK),
            ("relu", "relu", "none"),
            seed=seed + 1,
        )
        self.density_mlp = init_mlp(self.density_spec)
        self.color_spec = MlpSpec(
            (BOTTLENECK + DIR_ENC_DIM + id_dim, HIDDEN, HIDDEN, 3),
            ("relu", "relu", "sigmoid"),
            seed=seed + 2,
        )
        self.color_mlp = init_mlp(self.color_spec)
        self.nonunit_dir_count = 0

    def query(self, x_prime: Tensor, d: np.ndarray, geo: Tensor = None,
              app: Tensor = None, offset: Tensor = None,
              signals_flat: np.ndarray = None):
        """Radiance at canonical points.

        ``d`` is one unit 3-vector per point (non-unit directions are
        normalized and counted, not fatal).  ``geo``/``app`` are identity
        feature rows, ``offset`` a (1, 3) canonical-offset row, and
        ``signals_flat`` a raw driving-signal vector for the
        deformation-free model variant.
        """
        n = x_prime.shape[0]
        d = np.asarray(d, dtype=np.float64)
        if d.shape != (n, 3):
            raise ValueError(f"directions must have shape ({n}, 3), got {d.shape}")
        norms = np.sqrt((d * d).sum(axis=1))
        bad = np.abs(norms - 1.0) > 1e-6
        if bad.any():
            self.nonunit_dir_count += int(bad.sum())
            d = d / norms[:, None]

        if (geo is None) != (self.id_dim == 0) or (app is None) != (self.id_dim == 0):
            raise ValueError("geo/app presence must match the field's id_dim")
        if (signals_flat is None) != (self.signal_dim == 0):
            raise ValueError("signals_flat presence must match signal_dim")

        xq = x_prime if offset is None else ad.add(x_prime, offset)
        feat = self.encoder.encode(xq)
        parts = [feat]
        if geo is not None:
            parts.append(_rows(geo, n))
        if signals_flat is not None:
            sig = np.asarray(signals_flat, dtype=np.float64).reshape(-1)
            if sig.size != self.signal_dim:
                raise ValueError(
                    f"expected {self.signal_dim} signal values, got {sig.size}"
                )
            parts.append(ad.constant(np.broadcast_to(sig, (n, sig.size)).copy()))
        h = parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)
        dens_out = mlp_forward(self.density_spec, self.density_mlp, h)
        sigma = ad.softplus(ad.getitem(dens_out, (slice(None), slice(0, 1))))
        bottleneck = ad.getitem(dens_out, (slice(None), slice(1, None)))

        cparts = [bottleneck, ad.constant(encode_direction(d))]
        if app is not None:
            cparts.append(_rows(app, n))
        color = mlp_forward(self.color_spec, self.color_mlp, ad.concat(cparts, axis=-1))
        return sigma, color


def _rows(v: Tensor, n: int) -> Tensor:
    row = ad.reshape(v, (1, v.size))
    return ad.mul(row, ad.constant(np.ones((n, 1))))
