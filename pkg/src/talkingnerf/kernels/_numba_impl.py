"""Numba backend: serial @njit loops (deterministic accumulation order)."""

from __future__ import annotations

import numpy as np
from numba import njit

P1 = np.int64(1)
P2 = np.int64(2654435761)
P3 = np.int64(805459861)


@njit(cache=True)
def _encode_forward(coords, tables, resolutions, out, idx, wts, frac):
    n = coords.shape[0]
    levels = tables.shape[0]
    table_size = tables.shape[1]
    feat = tables.shape[2]
    for l in range(levels):
        res = resolutions[l]
        n_side = res + 1
        dense = n_side * n_side * n_side <= table_size
        for p in range(n):
            fr = np.empty(3)
            base = np.empty(3, dtype=np.int64)
            for d in range(3):
                xs = coords[p, d] * res
                i0 = np.int64(np.floor(xs))
                if i0 < 0:
                    i0 = 0
                elif i0 > res - 1:
                    i0 = res - 1
                base[d] = i0
                fr[d] = xs - i0
                frac[p, l, d] = fr[d]
            for c in range(8):
                bi = (c >> 2) & 1
                bj = (c >> 1) & 1
                bk = c & 1
                ci = base[0] + bi
                cj = base[1] + bj
                ck = base[2] + bk
                if dense:
                    entry = (ci * n_side + cj) * n_side + ck
                else:
                    entry = ((ci * P1) ^ (cj * P2) ^ (ck * P3)) & (table_size - 1)
                w = (fr[0] if bi == 1 else 1.0 - fr[0])
                w *= fr[1] if bj == 1 else 1.0 - fr[1]
                w *= fr[2] if bk == 1 else 1.0 - fr[2]
                idx[p, l, c] = entry
                wts[p, l, c] = w
                for f in range(feat):
                    out[p, l * feat + f] += w * tables[l, entry, f]


@njit(cache=True)
def _backward_tables(grad_out, idx, wts, gt):
    n = grad_out.shape[0]
    levels = gt.shape[0]
    feat = gt.shape[2]
    for l in range(levels):
        for p in range(n):
            for c in range(8):
                entry = idx[p, l, c]
                w = wts[p, l, c]
                for f in range(feat):
                    gt[l, entry, f] += w * grad_out[p, l * feat + f]


@njit(cache=True)
def _backward_coords(grad_out, idx, frac, tables, resolutions, gc):
    n = grad_out.shape[0]
    levels = tables.shape[0]
    feat = tables.shape[2]
    for l in range(levels):
        res = float(resolutions[l])
        for p in range(n):
            f0 = frac[p, l, 0]
            f1 = frac[p, l, 1]
            f2 = frac[p, l, 2]
            for c in range(8):
                bi = (c >> 2) & 1
                bj = (c >> 1) & 1
                bk = c & 1
                s = 0.0
                entry = idx[p, l, c]
                for f in range(feat):
                    s += tables[l, entry, f] * grad_out[p, l * feat + f]
                w0 = f0 if bi == 1 else 1.0 - f0
                w1 = f1 if bj == 1 else 1.0 - f1
                w2 = f2 if bk == 1 else 1.0 - f2
                s0 = 1.0 if bi == 1 else -1.0
                s1 = 1.0 if bj == 1 else -1.0
                s2 = 1.0 if bk == 1 else -1.0
                gc[p, 0] += res * s * s0 * w1 * w2
                gc[p, 1] += res * s * s1 * w0 * w2
                gc[p, 2] += res * s * s2 * w0 * w1


def hash_encode_forward(coords, tables, resolutions):
    n = coords.shape[0]
    levels, _, feat = tables.shape
    out = np.zeros((n, levels * feat))
    idx = np.empty((n, levels, 8), dtype=np.int64)
    wts = np.empty((n, levels, 8))
    frac = np.empty((n, levels, 3))
    _encode_forward(coords, tables, resolutions, out, idx, wts, frac)
    return out, idx, wts, frac


def hash_encode_backward_tables(grad_out, idx, wts, levels, table_size, feat):
    gt = np.zeros((levels, table_size, feat))
    _backward_tables(grad_out, idx, wts, gt)
    return gt


def hash_encode_backward_coords(grad_out, idx, frac, tables, resolutions):
    gc = np.zeros((grad_out.shape[0], 3))
    _backward_coords(grad_out, idx, frac, tables, resolutions, gc)
    return gc
