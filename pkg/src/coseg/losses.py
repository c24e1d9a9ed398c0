"""Segmentation cross-entropy and the non-saturating adversarial objective.

Both functions accept domain objects / numpy arrays (returning floats) or
torch tensors (returning tensors, preserving autograd).  Logs are clamped at
EPS = 1e-7 so saturated probabilities never produce infinities.
"""

from __future__ import annotations

import numpy as np
import torch

from .exceptions import ShapeError, ValidationError
from .types import LabelMap, ProbMap

EPS = 1e-7


def _to_prob_tensor(pred) -> tuple[torch.Tensor, bool]:
    """Returns (tensor, was_tensor)."""
    if isinstance(pred, ProbMap):
        return torch.from_numpy(pred.probs), False
    if isinstance(pred, torch.Tensor):
        return pred, True
    return torch.from_numpy(np.asarray(pred, dtype=np.float32)), False


def _to_label_tensor(target) -> torch.Tensor:
    if isinstance(target, LabelMap):
        return torch.from_numpy(target.classes.astype(np.int64))
    if isinstance(target, torch.Tensor):
        return target.long()
    return torch.from_numpy(np.asarray(target).astype(np.int64))


def segmentation_loss(pred, target, weight: float = 1.0):
    """Weighted per-pixel cross-entropy: weight * mean(-log p_target).

    pred: ProbMap / array / tensor of shape (C, H, W) or (B, C, H, W);
    target: LabelMap / array / tensor of shape (H, W) or (B, H, W).
    """
    if weight < 0:
        raise ValidationError(f"segmentation loss: weight {weight} must be >= 0")
    probs, was_tensor = _to_prob_tensor(pred)
    labels = _to_label_tensor(target)
    if probs.dim() == 3:
        probs = probs.unsqueeze(0)
        labels = labels.unsqueeze(0)
    if probs.dim() != 4 or labels.dim() != 3:
        raise ShapeError(
            f"segmentation loss: expected (B,C,H,W)/(B,H,W), got "
            f"{tuple(probs.shape)}/{tuple(labels.shape)}"
        )
    if probs.shape[-2:] != labels.shape[-2:] or probs.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"segmentation loss: prediction {tuple(probs.shape)} does not align "
            f"with target {tuple(labels.shape)}"
        )
    p_target = probs.gather(1, labels.unsqueeze(1)).clamp_min(EPS)
    loss = weight * (-p_target.log()).mean()
    return loss if was_tensor else float(loss)


def _per_sample_mean(x: torch.Tensor) -> torch.Tensor:
    return x.reshape(x.shape[0], -1).mean(dim=1)


def _to_score_tensor(scores) -> tuple[torch.Tensor, bool]:
    if isinstance(scores, torch.Tensor):
        t = scores
        was_tensor = True
    else:
        t = torch.from_numpy(np.asarray(scores, dtype=np.float32))
        was_tensor = False
    lo = float(t.detach().min())
    hi = float(t.detach().max())
    if not (0.0 < lo and hi < 1.0):
        raise ValidationError(
            f"adversarial loss: scores must lie strictly in (0, 1), got "
            f"[{lo:.4g}, {hi:.4g}]"
        )
    return t, was_tensor


def adversarial_losses(real_scores, fake_scores, real_weights=None):
    """Non-saturating GAN losses over patch score maps.

    d_loss = mean(-log real) + mean(-log(1 - fake)); g_loss = mean(-log fake).
    With ``real_weights`` (one weight per leading-dim sample) the real term
    becomes a weighted per-sample mean, which is how pseudo-labeled samples
    are down-weighted as discriminator "real" examples during training.
    """
    real, real_was_tensor = _to_score_tensor(real_scores)
    fake, fake_was_tensor = _to_score_tensor(fake_scores)
    was_tensor = real_was_tensor or fake_was_tensor

    neg_log_real = -real.clamp_min(EPS).log()
    if real_weights is None:
        d_real = neg_log_real.mean()
    else:
        w = real_weights if isinstance(real_weights, torch.Tensor) else torch.as_tensor(
            np.asarray(real_weights, dtype=np.float32)
        )
        if w.shape[0] != real.shape[0]:
            raise ShapeError(
                f"adversarial loss: {w.shape[0]} weights for {real.shape[0]} samples"
            )
        d_real = (w * _per_sample_mean(neg_log_real)).mean()
    d_loss = d_real + (-(1.0 - fake).clamp_min(EPS).log()).mean()
    g_loss = (-fake.clamp_min(EPS).log()).mean()
    if was_tensor:
        return d_loss, g_loss
    return float(d_loss), float(g_loss)
