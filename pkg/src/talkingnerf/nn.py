"""MLP and small-convolution building blocks on top of the autodiff core."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import make_rng

ACTIVATIONS = ("relu", "tanh", "sigmoid", "none")

_ACT_FNS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "none": lambda t: t,
}


@dataclass(frozen=True)
class MlpSpec:
    """Fully-connected network shape: widths plus one activation per layer.

    The same (spec, seed) pair always initializes to bit-identical
    parameters.
    """

    widths: tuple
    activations: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"all widths must be >= 1, got {self.widths}")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError(
                f"need {len(self.widths) - 1} activations for {len(self.widths)} widths, "
                f"got {len(self.activations)}"
            )
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def init_mlp(spec: MlpSpec) -> list:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights and biases per layer."""
    params = []
    for layer in range(spec.n_layers):
        fan_in, fan_out = spec.widths[layer], spec.widths[layer + 1]
        bound = 1.0 / np.sqrt(fan_in)
        rng = make_rng(spec.seed, layer)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=(fan_out,))
        params.append(ad.param(w))
        params.append(ad.param(b))
    return params


def zero_last_layer(params: list) -> None:
    """Zero the final (W, b) in place; gives deformation fields an identity start."""
    params[-2].data[...] = 0.0
    params[-1].data[...] = 0.0


def mlp_forward(spec: MlpSpec, params: list, x: Tensor, last_layer=None) -> Tensor:
    """Run the network.  ``last_layer``, when given, substitutes the final
    (W, b) pair (used by the hypernetwork path) without touching ``params``.
    """
    if len(params) != 2 * spec.n_layers:
        raise ValueError(
            f"expected {2 * spec.n_layers} parameter tensors, got {len(params)}"
        )
    if x.shape[-1] != spec.widths[0]:
        raise ValueError(
            f"layer 0 expects input width {spec.widths[0]}, got {x.shape[-1]}"
        )
    h = x
    for layer in range(spec.n_layers):
        w, b = params[2 * layer], params[2 * layer + 1]
        if last_layer is not None and layer == spec.n_layers - 1:
            w, b = last_layer
        if h.shape[-1] != w.shape[0]:
            raise ValueError(
                f"layer {layer} expects input width {w.shape[0]}, got {h.shape[-1]}"
            )
        h = ad.add(ad.matmul(h, w), b)
        h = _ACT_FNS[spec.activations[layer]](h)
    return h


# -- small convolutions (identity encoder, perceptual proxy) -------------------

_IM2COL_CACHE: dict = {}


def _im2col_indices(h, w, c, k, stride):
    """Flat gather indices mapping a padded (H, W, C) image to patch rows."""
    key = (h, w, c, k, stride)
    cached = _IM2COL_CACHE.get(key)
    if cached is not None:
        return cached
    hp, wp = h + k - 1, w + k - 1  # same-padding size
    out_h = (h + stride - 1) // stride if stride > 1 else h
    out_w = (w + stride - 1) // stride if stride > 1 else w
    rows = np.arange(out_h) * stride
    cols = np.arange(out_w) * stride
    ki = np.arange(k)
    # index math over (out_h, out_w, k, k, c) collapsed to flat positions
    r = rows[:, None, None, None, None] + ki[None, None, :, None, None]
    cc = cols[None, :, None, None, None] + ki[None, None, None, :, None]
    ch = np.arange(c)[None, None, None, None, :]
    flat = (r * wp + cc) * c + ch
    idx = flat.reshape(out_h * out_w, k * k * c)
    result = (idx, out_h, out_w)
    _IM2COL_CACHE[key] = result
    return result


def conv2d(x: Tensor, w: Tensor, b: Tensor = None, stride: int = 1) -> Tensor:
    """Same-padded 2-D convolution on a single (H, W, Cin) image.

    ``w`` has shape (k, k, Cin, Cout).  Odd kernel sizes only.
    """
    k = w.shape[0]
    if k % 2 != 1 or w.shape[1] != k:
        raise ValueError(f"conv2d expects a square odd kernel, got {w.shape[:2]}")
    h_in, w_in, c_in = x.shape
    if w.shape[2] != c_in:
        raise ValueError(f"kernel expects {w.shape[2]} input channels, got {c_in}")
    idx, out_h, out_w = _im2col_indices(h_in, w_in, c_in, k, stride)
    xp = ad.pad2d(x, k // 2)
    patches = ad.gather(xp, idx)  # (out_h*out_w, k*k*c_in)
    wmat = ad.reshape(w, (k * k * c_in, w.shape[3]))
    y = ad.matmul(patches, wmat)
    if b is not None:
        y = ad.add(y, b)
    return ad.reshape(y, (out_h, out_w, w.shape[3]))


def global_avg_pool(x: Tensor) -> Tensor:
    """(H, W, C) -> (1, C)."""
    return ad.reshape(ad.tmean(x, axis=(0, 1)), (1, x.shape[2]))


def avg_pool2(x: Tensor) -> Tensor:
    """Factor-2 average pooling; odd trailing rows/cols are dropped."""
    h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        return x
    xc = ad.getitem(x, (slice(0, h2 * 2), slice(0, w2 * 2)))
    xr = ad.reshape(xc, (h2, 2, w2, 2, c))
    return ad.tmean(xr, axis=(1, 3))
