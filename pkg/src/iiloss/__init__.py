"""Inter-intra modal loss for cross-modal contrastive retrieval, on a small autodiff tape."""

from .losses import LossBreakdown, LossWeights, ii_loss, inter_loss, intra_loss_modality
from .numerics import Tape, finite_diff_check

__all__ = [
    "LossBreakdown",
    "LossWeights",
    "Tape",
    "finite_diff_check",
    "ii_loss",
    "inter_loss",
    "intra_loss_modality",
]
