"""Differentiable volume rendering and training for synthetic talking portraits.

From-scratch float64 numpy stack: reverse-mode autodiff, multiresolution
hash encodings, region-specific cascaded deformation fields driven by
audio/eye/pose signals, identity-aware knowledge transfer via a reference
encoder and final-layer hypernetwork, volume rendering, losses, Adam,
deterministic synthetic scenes with analytic ground truth, and binary
checkpoints.  Hot kernels optionally run through numba (see
``talkingnerf.kernels``).
"""

from . import autodiff
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import (Dataset, DatasetManifest, load_dataset,
                      train_val_split, validate_dataset, write_dataset)
from .deform import (DeformationModel, DrivingSignals, MonolithicField,
                     SignalDims)
from .evaluate import MetricReport, evaluate, heat_ratios, psnr
from .gradcheck import GradCheckReport, grad_check
from .hashenc import HashEncoder, HashGridSpec
from .idtransfer import (IdTransferState, PhaseError, TransferPhase,
                         build_transfer, restore_finetune)
from .kernels import backend_name
from .losses import LossWeights, total_loss
from .model import IdentityContext, PortraitModel, detached_context
from .optim import Adam, ParamGroup, lr_at
from .radiance import RadianceField
from .render import Camera, integrate, make_rays, render_frame, sample_ray
from .rng import make_rng
from .selfcheck import run_selfcheck
from .synthdata import SyntheticIdentity, generate_identity, render_gt_frame
from .train import (TrainConfig, ablate, build_from_checkpoint, finetune,
                    pretrain)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Camera", "CheckpointError", "Dataset", "DatasetManifest",
    "DeformationModel", "DrivingSignals", "GradCheckReport", "HashEncoder",
    "HashGridSpec", "IdTransferState", "IdentityContext", "LossWeights",
    "MetricReport", "MonolithicField", "ParamGroup", "PhaseError",
    "PortraitModel", "RadianceField", "SignalDims", "SyntheticIdentity",
    "Tensor", "TrainConfig", "TransferPhase", "ablate", "autodiff",
    "backend_name", "build_from_checkpoint", "build_transfer",
    "detached_context", "evaluate", "finetune", "generate_identity",
    "grad_check", "heat_ratios", "integrate", "load_checkpoint",
    "load_dataset", "lr_at", "make_rays", "make_rng", "pretrain", "psnr",
    "render_frame", "render_gt_frame", "restore_finetune", "run_selfcheck",
    "sample_ray", "save_checkpoint", "total_loss", "train_val_split",
    "validate_dataset", "write_dataset",
]
