"""
Training objectives.

text_loss is the mean next-token negative log-likelihood over supervised
positions; image_loss is the flow-matching mean squared error averaged over
dimensions and then over supervised images; total_loss weights the two.
Unsupervised positions are never indexed, so their targets cannot leak in.
"""

from typing import Tuple, Union

import torch
import torch.nn.functional as F

from models.layout import SequenceLayout

Number = Union[float, torch.Tensor]


def text_loss(logits: torch.Tensor, layout: SequenceLayout) -> Tuple[torch.Tensor, int]:
    """
    Mean NLL over supervised text positions

    Args:
        logits: (n_text, V) logits in text-position order
        layout: Layout the logits came from

    Returns:
        (loss, count); count 0 flags that nothing was supervised and the loss is 0
    """
    mask = torch.tensor(layout.text_mask(), dtype=torch.bool)
    count = int(mask.sum())
    if count == 0:
        return logits.sum() * 0.0, 0
    targets = torch.tensor([layout.text_targets[i] for i in layout.text_positions()], dtype=torch.long)
    return F.cross_entropy(logits[mask], targets[mask], reduction='mean'), count


def image_loss(u_pred: torch.Tensor, u_star: torch.Tensor, layout: SequenceLayout) -> Tuple[torch.Tensor, int]:
    """
    Flow-matching loss over supervised images

    Args:
        u_pred: (n_images, D) predicted velocities
        u_star: (n_images, D) target velocities
        layout: Layout naming which images are supervised

    Returns:
        (loss, count); count 0 flags that no image was supervised
    """
    mask = torch.tensor(layout.image_mask(), dtype=torch.bool)
    count = int(mask.sum())
    if count == 0:
        return u_pred.sum() * 0.0, 0
    return F.mse_loss(u_pred[mask], u_star[mask].to(u_pred.dtype), reduction='mean'), count


def total_loss(l_text: Number, l_img: Number, lambda_text: float = 2.0, lambda_img: float = 1.0) -> Number:
    return lambda_text * l_text + lambda_img * l_img
