"""Pure-numpy reference backend for the hash-grid kernels."""

from __future__ import annotations

import numpy as np

from ._common import CORNER_BITS, P1, P2, P3


def _corner_indices(i0, level_res, table_size):
    """Flat table indices of the 8 cell corners for one level.

    i0: (N, 3) int64 lower-corner coords.  Levels whose full corner grid
    fits in the table index directly; larger ones use the spatial hash.
    """
    corners = i0[:, None, :] + CORNER_BITS[None, :, :]  # (N, 8, 3)
    n_side = level_res + 1
    if n_side**3 <= table_size:
        return (corners[..., 0] * n_side + corners[..., 1]) * n_side + corners[..., 2]
    h = (corners[..., 0] * P1) ^ (corners[..., 1] * P2) ^ (corners[..., 2] * P3)
    return h & (table_size - 1)


def hash_encode_forward(coords, tables, resolutions):
    """Trilinear multi-level encode.

    coords: (N, 3) float64 already clamped to [0, 1]
    tables: (L, H, F) float64
    resolutions: (L,) int64 cells per axis
    Returns (out (N, L*F), idx (N, L, 8), wts (N, L, 8), frac (N, L, 3)).
    """
    n = coords.shape[0]
    levels, table_size, feat = tables.shape
    out = np.empty((n, levels * feat))
    idx = np.empty((n, levels, 8), dtype=np.int64)
    wts = np.empty((n, levels, 8))
    frac = np.empty((n, levels, 3))
    for l in range(levels):
        res = int(resolutions[l])
        xs = coords * res
        i0 = np.clip(np.floor(xs).astype(np.int64), 0, res - 1)
        f = xs - i0
        idx[:, l, :] = _corner_indices(i0, res, table_size)
        fac = np.where(CORNER_BITS[None, :, :] == 1, f[:, None, :], 1.0 - f[:, None, :])
        w = fac[:, :, 0] * fac[:, :, 1] * fac[:, :, 2]
        tv = tables[l][idx[:, l, :]]  # (N, 8, F)
        out[:, l * feat : (l + 1) * feat] = np.einsum("nc,ncf->nf", w, tv)
        wts[:, l, :] = w
        frac[:, l, :] = f
    return out, idx, wts, frac


def hash_encode_backward_tables(grad_out, idx, wts, levels, table_size, feat):
    """Scatter-add d(out)/d(tables): each touched entry gets weight * grad."""
    gt = np.zeros((levels, table_size, feat))
    for l in range(levels):
        g = grad_out[:, l * feat : (l + 1) * feat]  # (N, F)
        contrib = wts[:, l, :, None] * g[:, None, :]  # (N, 8, F)
        np.add.at(gt[l], idx[:, l, :].reshape(-1), contrib.reshape(-1, feat))
    return gt


def hash_encode_backward_coords(grad_out, idx, frac, tables, resolutions):
    """d(out)/d(coords) through the trilinear weights."""
    n = grad_out.shape[0]
    levels, _, feat = tables.shape
    gc = np.zeros((n, 3))
    bits = CORNER_BITS
    for l in range(levels):
        g = grad_out[:, l * feat : (l + 1) * feat]
        tv = tables[l][idx[:, l, :]]  # (N, 8, F)
        s = np.einsum("ncf,nf->nc", tv, g)  # (N, 8)
        f = frac[:, l, :]
        fac = np.where(bits[None, :, :] == 1, f[:, None, :], 1.0 - f[:, None, :])
        res = float(resolutions[l])
        for d in range(3):
            o1, o2 = (d + 1) % 3, (d + 2) % 3
            sign = np.where(bits[:, d] == 1, 1.0, -1.0)
            dw = sign[None, :] * fac[:, :, o1] * fac[:, :, o2]
            gc[:, d] += res * (s * dw).sum(axis=1)
    return gc
