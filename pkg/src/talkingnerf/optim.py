"""Adam optimizer over named parameter groups.

Groups carry their own learning-rate schedule endpoints so identity codes
can adapt faster than shared weights during fine-tuning.  First and second
moments live per parameter and serialize into flat float64 arrays for
checkpointing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

BETA1 = 0.9
BETA2 = 0.99
EPS = 1e-8


def lr_at(lr_start: float, lr_end: float, epoch: float, total_epochs: float) -> float:
    """Exponential interpolation from lr_start (epoch 0) to lr_end (last)."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if lr_start <= 0 or lr_end <= 0:
        raise ValueError("learning rates must be positive")
    frac = min(max(epoch / total_epochs, 0.0), 1.0)
    return lr_start * (lr_end / lr_start) ** frac


@dataclass
class ParamGroup:
    """Named parameters sharing one learning-rate schedule."""

    name: str
    params: dict  # param name -> Tensor
    lr_start: float
    lr_end: float


class Adam:
    """Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, groups: list):
        names = [g.name for g in groups]
        if len(set(names)) != len(names):
            raise ValueError("group names must be unique")
        seen: dict = {}
        for g in groups:
            for pname, p in g.params.items():
                if not isinstance(p, Tensor) or not p.requires_grad:
                    raise ValueError(f"{pname} is not a trainable tensor")
                if pname in seen:
                    raise ValueError(f"parameter {pname} appears in two groups")
                seen[pname] = p
        self.groups = list(groups)
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in seen.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in seen.items()}

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g.params.values():
                p.grad = None

    def step(self, epoch: float, total_epochs: float) -> dict:
        """One update; parameters without gradients are left in place.

        Returns the learning rate used per group.
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - BETA1 ** t
        bc2 = 1.0 - BETA2 ** t
        rates = {}
        for g in self.groups:
            lr = lr_at(g.lr_start, g.lr_end, epoch, total_epochs)
            rates[g.name] = lr
            for pname, p in g.params.items():
                if p.grad is None:
                    continue
                grad = p.grad
                if not np.all(np.isfinite(grad)):
                    raise FloatingPointError(f"non-finite gradient in {pname}")
                m = self.m[pname]
                v = self.v[pname]
                m *= BETA1
                m += (1.0 - BETA1) * grad
                v *= BETA2
                v += (1.0 - BETA2) * grad * grad
                p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
        return rates

    # -- serialization ------------------------------------------------------------

    def state_arrays(self) -> dict:
        """Flat float64 arrays capturing moments and the step counter."""
        out = {"adam.step": np.array([float(self.step_count)])}
        for name in sorted(self.m):
            out[f"adam.m.{name}"] = self.m[name].reshape(-1).astype(np.float64)
            out[f"adam.v.{name}"] = self.v[name].reshape(-1).astype(np.float64)
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.step_count = int(arrays["adam.step"][0])
        for name, m in self.m.items():
            key_m, key_v = f"adam.m.{name}", f"adam.v.{name}"
            if key_m not in arrays or key_v not in arrays:
                raise KeyError(f"optimizer state missing for {name}")
            self.m[name] = np.asarray(arrays[key_m]).reshape(m.shape).copy()
            self.v[name] = np.asarray(arrays[key_v]).reshape(m.shape).copy()
