"""Projection head, losses, gradient checking and training."""

from .head import AcxHeadParams, backward, forward, head_forward
from .losses import LossBreakdown, ProjectedBatch, cos_sim, l2_dist, loss_total

__all__ = ["AcxHeadParams", "LossBreakdown", "ProjectedBatch", "backward", "cos_sim", "forward",
           "head_forward", "l2_dist", "loss_total"]
