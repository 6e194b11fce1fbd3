"""Identity-aware knowledge transfer.

A small convolutional encoder turns one masked reference frame into an
identity bundle: a dynamic feature (which a linear hypernetwork maps to the
deformation MLPs' final layers), appearance and geometry features for the
color and density decoders, and a canonical-offset 3-vector.  Training runs
in phases: during pretraining the encoder and hypernetwork learn jointly
with the base model; fine-tuning starts by materializing one bundle into
plain trainable parameters, after which the encoder is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ID_DIM, IdentityContext, PortraitModel
from .nn import conv2d, global_avg_pool
from .rng import make_rng

CONV_CHANNELS = (16, 32, 32, 32)
HEAD_DIMS = {"dyn": ID_DIM, "app": ID_DIM, "geo": ID_DIM, "off": 3}


class TransferPhase(Enum):
    PRETRAIN = "pretrain"
    FINETUNE_INIT = "finetune_init"
    FINETUNE = "finetune"
    INFERENCE = "inference"


_LEGAL_TRANSITIONS = {
    TransferPhase.PRETRAIN: (TransferPhase.FINETUNE_INIT,),
    TransferPhase.FINETUNE_INIT: (TransferPhase.FINETUNE,),
    TransferPhase.FINETUNE: (TransferPhase.INFERENCE,),
    TransferPhase.INFERENCE: (),
}


class PhaseError(RuntimeError):
    """Raised on an illegal phase transition or phase validity violation."""


@dataclass
class IdentityBundle:
    """Everything the model needs to be conditioned on one identity."""

    dyn: Tensor
    app: Tensor
    geo: Tensor
    offset: Tensor
    last_layers: dict  # name ("face"/"torso") -> (W, b) tensors

    def context(self) -> IdentityContext:
        return IdentityContext(
            self.dyn, self.app, self.geo, self.offset,
            face_last=self.last_layers.get("face"),
            torso_last=self.last_layers.get("torso"),
            mono_last=self.last_layers.get("mono"),
        )


class IdEncoder:
    """Stride-2 conv stack + global average pool + per-output dense heads."""

    def __init__(self, seed: int, in_channels: int = 4):
        self.in_channels = in_channels
        self.convs = []
        cin = in_channels
        for i, cout in enumerate(CONV_CHANNELS):
            bound = 1.0 / np.sqrt(9.0 * cin)
            rng = make_rng(seed, 200 + i)
            w = ad.param(rng.uniform(-bound, bound, size=(3, 3, cin, cout)))
            b = ad.param(rng.uniform(-bound, bound, size=(cout,)))
            self.convs.append((w, b))
            cin = cout
        self.heads = {}
        for j, (name, dim) in enumerate(sorted(HEAD_DIMS.items())):
            bound = 1.0 / np.sqrt(cin)
            rng = make_rng(seed, 300 + j)
            w = ad.param(rng.uniform(-bound, bound, size=(cin, dim)))
            b = ad.param(rng.uniform(-bound, bound, size=(dim,)))
            self.heads[name] = (w, b)

    def __call__(self, image: np.ndarray, labels: np.ndarray) -> dict:
        """Masked portrait -> feature rows keyed by head name, each (1, dim)."""
        if isinstance(image, ad.Tensor):
            image = image.data
        image = np.asarray(image, dtype=np.float64)
        labels = np.asarray(labels)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
        if labels.shape != image.shape[:2]:
            raise ValueError(
                f"labels shape {labels.shape} does not match image {image.shape[:2]}"
            )
        fg = (labels > 0).astype(np.float64)
        x = np.concatenate(
            [image * fg[..., None], (labels.astype(np.float64) / 4.0)[..., None]],
            axis=2,
        )
        h = ad.constant(x)
        for w, b in self.convs:
            h = ad.relu(conv2d(h, w, b, stride=2))
        pooled = global_avg_pool(h)  # (1, C)
        return {name: ad.add(ad.matmul(pooled, w), b)
                for name, (w, b) in self.heads.items()}

    def params(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"idenc.conv{i}.w"] = w
            out[f"idenc.conv{i}.b"] = b
        for name, (w, b) in self.heads.items():
            out[f"idenc.head_{name}.w"] = w
            out[f"idenc.head_{name}.b"] = b
        return out


class HyperNet:
    """Linear map from the dynamic feature to each target MLP's final layer.

    Weights and biases start at zero so emitted layers are zero and the
    deformation cascade begins as the identity warp.
    """

    def __init__(self, targets: dict, feature_dim: int = ID_DIM):
        self.feature_dim = feature_dim
        self.targets = dict(targets)  # name -> (in_width, out_width)
        self.maps = {}
        for name, (w_in, w_out) in sorted(self.targets.items()):
            flat = w_in * w_out + w_out
            self.maps[name] = (
                ad.param(np.zeros((feature_dim, flat))),
                ad.param(np.zeros((flat,))),
            )

    def emit(self, dyn: Tensor) -> dict:
        """dynamic feature (1, d) -> {name: (W (in, out), b (out,))}."""
        if dyn.shape != (1, self.feature_dim):
            raise ValueError(
                f"dynamic feature must have shape (1, {self.feature_dim}), "
                f"got {dyn.shape}"
            )
        out = {}
        for name, (w_in, w_out) in self.targets.items():
            hw, hb = self.maps[name]
            flat = ad.add(ad.matmul(dyn, hw), hb)  # (1, in*out + out)
            w = ad.reshape(
                ad.getitem(flat, (slice(None), slice(0, w_in * w_out))),
                (w_in, w_out),
            )
            b = ad.reshape(
                ad.getitem(flat, (slice(None), slice(w_in * w_out, None))),
                (w_out,),
            )
            out[name] = (w, b)
        return out

    def params(self) -> dict:
        out = {}
        for name, (hw, hb) in self.maps.items():
            out[f"hyper.{name}.w"] = hw
            out[f"hyper.{name}.b"] = hb
        return out


class IdTransferState:
    """Phase machine tying encoder, hypernetwork, and model together."""

    def __init__(self, model: PortraitModel, encoder: IdEncoder,
                 hypernet: HyperNet, phase: TransferPhase = TransferPhase.PRETRAIN):
        if not model.with_id:
            raise ValueError("identity transfer requires a model with identity slots")
        self.model = model
        self.encoder = encoder
        self.hypernet = hypernet
        self.phase = phase
        self.id_params: dict = {}

    def transition(self, new_phase: TransferPhase) -> None:
        if new_phase not in _LEGAL_TRANSITIONS[self.phase]:
            raise PhaseError(f"illegal transition {self.phase.value} -> {new_phase.value}")
        self.phase = new_phase

    def encode_identity(self, image: np.ndarray, labels: np.ndarray) -> IdentityBundle:
        """Reference frame -> bundle (pretrain phase only)."""
        if self.phase is not TransferPhase.PRETRAIN:
            raise PhaseError(
                f"the identity encoder is discarded after pretraining "
                f"(phase is {self.phase.value})"
            )
        feats = self.encoder(image, labels)
        return IdentityBundle(
            dyn=feats["dyn"], app=feats["app"], geo=feats["geo"],
            offset=feats["off"],
            last_layers=self.hypernet.emit(feats["dyn"]),
        )

    def finetune_init(self, bundle: IdentityBundle) -> IdentityContext:
        """Materialize a bundle into plain parameters and drop the encoder.

        Emitted final layers overwrite the deformation MLPs' own final
        layers; identity features and the canonical offset become trainable
        codes.  The conditioned model's outputs are unchanged bit for bit.
        """
        self.transition(TransferPhase.FINETUNE_INIT)
        model = self.model
        if model.deform is not None:
            mlps = {"face": model.deform.face.mlp, "torso": model.deform.torso.mlp}
        elif model.mono is not None:
            mlps = {"mono": model.mono.mlp}
        else:
            mlps = {}
        for name, (w, b) in bundle.last_layers.items():
            target = mlps.get(name)
            if target is None:
                raise PhaseError(f"bundle targets unknown MLP {name!r}")
            if target[-2].shape != w.shape or target[-1].shape != b.shape:
                raise PhaseError(
                    f"bundle last layer {name!r} has shape {w.shape}/{b.shape}, "
                    f"target expects {target[-2].shape}/{target[-1].shape}"
                )
            target[-2].data[...] = w.data
            target[-1].data[...] = b.data
        self.id_params = {
            "id.dyn": ad.param(bundle.dyn.data.copy()),
            "id.app": ad.param(bundle.app.data.copy()),
            "id.geo": ad.param(bundle.geo.data.copy()),
            "id.offset": ad.param(bundle.offset.data.copy()),
        }
        self.encoder = None
        self.hypernet = None
        self.transition(TransferPhase.FINETUNE)
        return self.context()

    def context(self) -> IdentityContext:
        """Identity conditioning for the current phase (post-materialization)."""
        if self.phase is TransferPhase.PRETRAIN:
            raise PhaseError("pretrain builds contexts from per-step bundles")
        p = self.id_params
        return IdentityContext(p["id.dyn"], p["id.app"], p["id.geo"],
                               p["id.offset"], face_last=None, torso_last=None)

    def params(self) -> dict:
        """Phase-appropriate trainable parameters beyond the base model."""
        out = {}
        if self.phase is TransferPhase.PRETRAIN:
            out.update(self.encoder.params())
            out.update(self.hypernet.params())
        else:
            out.update(self.id_params)
        return out


def build_transfer(model: PortraitModel, seed: int) -> IdTransferState:
    """Fresh pretrain-phase state with hypernet targets matching the model."""
    if model.deform is not None:
        targets = {
            "face": (model.deform.face.mlp_spec.widths[-2],
                     model.deform.face.mlp_spec.widths[-1]),
            "torso": (model.deform.torso.mlp_spec.widths[-2],
                      model.deform.torso.mlp_spec.widths[-1]),
        }
    elif model.mono is not None:
        targets = {"mono": (model.mono.mlp_spec.widths[-2],
                            model.mono.mlp_spec.widths[-1])}
    else:
        targets = {}
    return IdTransferState(model, IdEncoder(seed=seed + 40),
                           HyperNet(targets), TransferPhase.PRETRAIN)


def restore_finetune(model: PortraitModel, id_arrays: dict) -> IdTransferState:
    """Rebuild a post-materialization state from checkpointed identity codes.

    ``id_arrays`` maps the four ``id.*`` names to arrays; the materialized
    final layers are assumed to already sit in the model parameters.
    """
    state = IdTransferState(model, encoder=None, hypernet=None,
                            phase=TransferPhase.FINETUNE)
    needed = {"id.dyn", "id.app", "id.geo", "id.offset"}
    if set(id_arrays) != needed:
        raise ValueError(
            f"expected identity arrays {sorted(needed)}, got {sorted(id_arrays)}"
        )
    state.id_params = {
        name: ad.param(np.asarray(arr, dtype=np.float64))
        for name, arr in id_arrays.items()
    }
    return state
