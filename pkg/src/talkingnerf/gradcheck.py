"""Central-difference verification of analytic gradients.

Used by the test suite and the ``gradcheck`` CLI subcommand to validate
every loss term end to end.  Checks are exhaustive over parameter elements
by default; large parameters can be spot-checked on a deterministic random
subset of elements so full models stay within a time budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import make_rng


@dataclass
class GradCheckReport:
    per_param: dict  # name -> max relative deviation
    worst_param: str
    max_deviation: float

    def __str__(self):
        lines = [f"{name}: {dev:.3e}" for name, dev in sorted(self.per_param.items())]
        lines.append(f"worst: {self.worst_param} ({self.max_deviation:.3e})")
        return "\n".join(lines)


def _rel_dev(analytic, numeric, floor):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(f, params: dict, step: float = 1e-6, floor: float = 1e-6,
               elements_per_param: int = 0) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    ``f`` must be deterministic and close over the tensors in ``params``;
    it is re-evaluated 2x per checked element.  Deviations are relative
    to max(|analytic|, |numeric|, floor); the floor absorbs finite-difference
    noise on near-zero gradients.  ``elements_per_param`` > 0 limits each
    parameter to that many elements, chosen by a fixed-seed draw.
    """
    for name, p in params.items():
        if not np.all(np.isfinite(p.data)):
            raise ValueError(f"parameter {name} contains non-finite values")

    ad.zero_grads(params.values())
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("loss is non-finite at the evaluation point")
    ad.backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    per_param = {}
    for pi, name in enumerate(sorted(params)):
        p = params[name]
        flat = p.data.reshape(-1)
        if elements_per_param and flat.size > elements_per_param:
            idx = make_rng(424242, pi).choice(
                flat.size, size=elements_per_param, replace=False)
        else:
            idx = np.arange(flat.size)
        ana_flat = analytic[name].reshape(-1)
        num = np.zeros(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            hi = f().data.reshape(-1)[0]
            flat[i] = orig - step
            lo = f().data.reshape(-1)[0]
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(
                    f"loss is non-finite at a perturbed point of {name}[{i}]"
                )
            num[j] = (hi - lo) / (2.0 * step)
        dev = _rel_dev(ana_flat[idx], num, floor)
        per_param[name] = float(dev.max()) if dev.size else 0.0

    worst = max(per_param, key=per_param.get)
    return GradCheckReport(per_param, worst, per_param[worst])
