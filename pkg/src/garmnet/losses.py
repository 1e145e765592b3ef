"""Training losses: masked landmark regression/classification, the composed
spatial-constraint classification loss, garment losses and their weighted sum.

All functions are pure over tensors and accept either a single grid
``(S, S, ...)`` or a batch ``(B, S, S, ...)``. Probability inputs are clamped
inside every cross-entropy so a confident-but-wrong prediction never produces
an infinite loss. Masked losses divide by the number of contributing terms,
keeping magnitudes stable across images with different positive counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import BACKGROUND

PROB_EPS = 1e-7


@dataclass
class LossBundle:
    """The four loss components and their weighted total."""

    landmark_reg: torch.Tensor
    landmark_cls: torch.Tensor
    garment_cls: torch.Tensor
    garment_reg: torch.Tensor
    weights: tuple[float, float, float, float]
    total: torch.Tensor

    def detached(self) -> dict[str, float]:
        return {
            "landmark_reg": float(self.landmark_reg),
            "landmark_cls": float(self.landmark_cls),
            "garment_cls": float(self.garment_cls),
            "garment_reg": float(self.garment_reg),
            "total": float(self.total),
        }


@dataclass
class SpatialMask:
    """Which landmark classes carry a positive anchor in the ground truth."""

    active_classes: np.ndarray  # (n_landmark_classes,) bool

    @staticmethod
    def from_labels(label: np.ndarray, n_classes: int) -> "SpatialMask":
        active = np.zeros(n_classes, dtype=bool)
        present = np.unique(label[label >= 0])
        active[present] = True
        return SpatialMask(active_classes=active)


def classification_targets(label: np.ndarray, n_classes: int) -> np.ndarray:
    """One-hot targets over ``n_classes + 1`` channels; channel ``n_classes``
    is background. Ignored cells stay all-zero (they are excluded by masks)."""
    h, w = label.shape
    onehot = np.zeros((h, w, n_classes + 1), dtype=np.float32)
    pos = label >= 0
    onehot[pos, label[pos]] = 1.0
    onehot[label == BACKGROUND, n_classes] = 1.0
    return onehot


def _as_batch(t: torch.Tensor, ndim: int) -> torch.Tensor:
    if t.dim() == ndim - 1:
        return t.unsqueeze(0)
    if t.dim() != ndim:
        raise ValueError(f"expected {ndim - 1}D or {ndim}D tensor, got {t.dim()}D")
    return t


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(PROB_EPS, 1.0 - PROB_EPS))


def robust_loss(pred, target) -> torch.Tensor:
    """Elementwise robust error: quadratic below 0.5 absolute error, linear above."""
    if not torch.is_tensor(pred):
        pred = torch.as_tensor(pred, dtype=torch.float64)
    elif not pred.is_floating_point():
        pred = pred.to(torch.get_default_dtype())
    target = torch.as_tensor(target, dtype=pred.dtype)
    d = (pred - target).abs()
    return torch.where(d < 0.5, d * d, d)


def landmark_regression_loss(
    pred_offsets: torch.Tensor, target_offsets: torch.Tensor, positive_mask
) -> torch.Tensor:
    """Robust loss over both offset channels of positive cells, mean-reduced.

    Background cells carry no offset target, so only positives contribute;
    zero positives yield a zero loss.
    """
    pred_offsets = _as_batch(pred_offsets, 4)
    target_offsets = _as_batch(torch.as_tensor(target_offsets, dtype=pred_offsets.dtype), 4)
    if pred_offsets.shape != target_offsets.shape:
        raise ValueError(
            f"offset shapes differ: {tuple(pred_offsets.shape)} vs {tuple(target_offsets.shape)}"
        )
    mask = _as_batch(torch.as_tensor(np.asarray(positive_mask), dtype=torch.bool), 3)
    if mask.shape != pred_offsets.shape[:3]:
        raise ValueError("positive mask shape does not match offsets")
    per_cell = robust_loss(pred_offsets, target_offsets).sum(dim=-1)
    total = (per_cell * mask).sum()
    count = 2 * mask.sum()
    if count == 0:
        return total * 0.0
    return total / count


def landmark_classification_loss(
    depth_probs: torch.Tensor, targets: torch.Tensor, active_mask
) -> torch.Tensor:
    """Mean cross-entropy over mask-active cells against one-hot targets."""
    depth_probs = _as_batch(depth_probs, 4)
    targets = _as_batch(torch.as_tensor(targets, dtype=depth_probs.dtype), 4)
    if depth_probs.shape != targets.shape:
        raise ValueError(
            f"score/target shapes differ: {tuple(depth_probs.shape)} vs {tuple(targets.shape)}"
        )
    mask = _as_batch(torch.as_tensor(np.asarray(active_mask), dtype=torch.bool), 3)
    ce = -(targets * _clamped_log(depth_probs)).sum(dim=-1)
    total = (ce * mask).sum()
    count = mask.sum()
    if count == 0:
        return total * 0.0
    return total / count


def spatial_constraint_loss(
    depth_probs: torch.Tensor,
    spatial_probs: torch.Tensor,
    targets: torch.Tensor,
    active_mask,
    spatial_mask,
) -> torch.Tensor:
    """Half the sum of the depth-wise masked cross-entropy and a per-class
    spatial cross-entropy.

    The spatial term, for each ground-truth-active class, compares that
    class's spatial probability plane against an indicator placing its mass
    on the class's positive cell(s) (split uniformly if several), then
    averages over active classes; inactive classes contribute nothing.
    """
    depth_probs = _as_batch(depth_probs, 4)
    spatial_probs = _as_batch(spatial_probs, 4)
    targets = _as_batch(torch.as_tensor(targets, dtype=depth_probs.dtype), 4)
    if depth_probs.shape != spatial_probs.shape or depth_probs.shape != targets.shape:
        raise ValueError("depth, spatial and target shapes must all match")

    depth_sums = depth_probs.sum(dim=-1)
    if not torch.allclose(depth_sums, torch.ones_like(depth_sums), atol=1e-3):
        raise ValueError("depth_probs are not normalized over the class dimension")
    plane_sums = spatial_probs.sum(dim=(1, 2))
    if not torch.allclose(plane_sums, torch.ones_like(plane_sums), atol=1e-3):
        raise ValueError("spatial_probs are not normalized over the grid")

    class_active = _as_batch(torch.as_tensor(np.asarray(spatial_mask), dtype=torch.bool), 2)
    n_active_classes = class_active.shape[-1]

    depth_term = landmark_classification_loss(depth_probs, targets, active_mask)

    log_spatial = _clamped_log(spatial_probs)  # (B, S, S, C)
    indicator = targets[..., :n_active_classes]
    mass = indicator.sum(dim=(1, 2))  # (B, n)
    norm = torch.where(mass > 0, mass, torch.ones_like(mass))
    ce_per_class = -(indicator / norm[:, None, None, :] * log_spatial[..., :n_active_classes]).sum(
        dim=(1, 2)
    )  # (B, n)
    active = class_active & (mass > 0)
    n_active = active.sum()
    if n_active == 0:
        spatial_term = depth_term * 0.0
    else:
        spatial_term = (ce_per_class * active).sum() / n_active
    return 0.5 * (depth_term + spatial_term)


def garment_losses(
    pred_probs: torch.Tensor,
    target_onehot: torch.Tensor,
    pred_box: torch.Tensor,
    target_box: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-entropy on the garment class, mean squared error on the box codec."""
    pred_probs = _as_batch(pred_probs, 2)
    target_onehot = _as_batch(torch.as_tensor(target_onehot, dtype=pred_probs.dtype), 2)
    pred_box = _as_batch(pred_box, 2)
    target_box = _as_batch(torch.as_tensor(target_box, dtype=pred_box.dtype), 2)
    cls = -(target_onehot * _clamped_log(pred_probs)).sum(dim=-1).mean()
    reg = ((pred_box - target_box) ** 2).mean()
    return cls, reg


def total_loss(
    landmark_reg: torch.Tensor,
    landmark_cls: torch.Tensor,
    garment_cls: torch.Tensor,
    garment_reg: torch.Tensor,
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
) -> LossBundle:
    if any(w < 0 for w in weights):
        raise ValueError("loss weights must be >= 0")
    total = (
        weights[0] * landmark_reg
        + weights[1] * landmark_cls
        + weights[2] * garment_cls
        + weights[3] * garment_reg
    )
    return LossBundle(
        landmark_reg=landmark_reg,
        landmark_cls=landmark_cls,
        garment_cls=garment_cls,
        garment_reg=garment_reg,
        weights=tuple(weights),
        total=total,
    )
