"""Multiresolution hash-grid positional encoder.

Maps a 3-D coordinate in the unit scene box to a trainable feature vector:
per level, the 8 surrounding grid-corner entries are fetched (directly for
coarse levels whose corner grid fits in the table, through a spatial hash
otherwise) and blended trilinearly; levels are concatenated.  Differentiable
in both the table entries and the coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .rng import make_rng

TABLE_INIT_SCALE = 1e-4


@dataclass(frozen=True)
class HashGridSpec:
    levels: int = 8
    features_per_level: int = 2
    table_size_log2: int = 16
    base_resolution: int = 16
    per_level_scale: float = 1.382
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1 or self.features_per_level < 1:
            raise ValueError("levels and features_per_level must be positive")
        if self.table_size_log2 < 1 or self.table_size_log2 > 30:
            raise ValueError(f"table_size_log2 out of range: {self.table_size_log2}")
        if self.base_resolution < 1:
            raise ValueError("base_resolution must be positive")
        if self.per_level_scale <= 1.0:
            raise ValueError("per_level_scale must exceed 1")

    @property
    def table_size(self) -> int:
        return 1 << self.table_size_log2

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    def resolutions(self) -> np.ndarray:
        scales = self.per_level_scale ** np.arange(self.levels)
        return np.floor(self.base_resolution * scales).astype(np.int64)


def init_tables(spec: HashGridSpec) -> Tensor:
    """(levels, 2^T, F) parameter tensor, small uniform entries per level."""
    tables = np.empty((spec.levels, spec.table_size, spec.features_per_level))
    for l in range(spec.levels):
        rng = make_rng(spec.seed, l)
        tables[l] = rng.uniform(
            -TABLE_INIT_SCALE, TABLE_INIT_SCALE, size=tables[l].shape
        )
    return ad.param(tables)


class HashEncoder:
    """Encoder instance: spec + trainable tables + out-of-box clamp counter."""

    def __init__(self, spec: HashGridSpec, tables: Tensor = None):
        self.spec = spec
        self.tables = tables if tables is not None else init_tables(spec)
        if self.tables.shape != (spec.levels, spec.table_size, spec.features_per_level):
            raise ValueError(
                f"table shape {self.tables.shape} does not match spec "
                f"({spec.levels}, {spec.table_size}, {spec.features_per_level})"
            )
        self._resolutions = spec.resolutions()
        self.clamp_count = 0

    def encode(self, x: Tensor) -> Tensor:
        """(N, 3) coordinates -> (N, levels * F) features.

        Coordinates outside [0, 1]^3 are clamped (counted, not fatal) and
        receive zero positional gradient in the clamped dimensions.
        """
        if x.ndim != 2 or x.shape[1] != 3:
            raise ValueError(f"encode expects (N, 3) coordinates, got {x.shape}")
        raw = x.data
        inside = (raw >= 0.0) & (raw <= 1.0)
        n_clamped = int(raw.shape[0] - np.all(inside, axis=1).sum())
        self.clamp_count += n_clamped
        clamped = np.clip(raw, 0.0, 1.0) if n_clamped else raw

        tables = self.tables
        spec = self.spec
        res = self._resolutions
        out, idx, wts, frac = kernels.hash_encode_forward(clamped, tables.data, res)

        def vjp(g):
            g = np.ascontiguousarray(g)
            gt = None
            gx = None
            if tables.requires_grad:
                gt = kernels.hash_encode_backward_tables(
                    g, idx, wts, spec.levels, spec.table_size, spec.features_per_level
                )
            if x.requires_grad:
                gx = kernels.hash_encode_backward_coords(g, idx, frac, tables.data, res)
                if n_clamped:
                    gx = gx * inside
            return gx, gt

        return ad._make(out, (x, tables), vjp)
