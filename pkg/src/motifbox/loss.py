"""Multi-part detection loss for 1D boundaries, and the frame-wise baseline loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .audio import CLIP_FRAMES, HOP, SAMPLE_RATE
from .errors import ShapeError


@dataclass(frozen=True)
class LossWeights:
    coord: float = 5.0
    noobj: float = 0.5

    def __post_init__(self):
        if not (self.coord > 0 and self.noobj > 0):
            raise ValueError("loss weights must be positive")


@dataclass
class LossBreakdown:
    total: torch.Tensor
    coord: torch.Tensor
    obj: torch.Tensor
    noobj: torch.Tensor
    cls: torch.Tensor
    n_responsible: int

    def as_floats(self) -> dict:
        return {k: getattr(self, k).item() for k in ("total", "coord", "obj", "noobj", "cls")} | {
            "n_responsible": self.n_responsible}


def detection_loss(pred: torch.Tensor, target, ignore_mask=None, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Summed loss over every cell (and batch entry) of ``pred``.

    ``pred`` and ``target`` are (..., n_anchors, n_grids, 3 + C). ``target`` may be a
    TargetTensor, in which case its ignore mask is used.
    """
    if hasattr(target, "ignore_mask"):
        ignore_mask = target.ignore_mask if ignore_mask is None else ignore_mask
        target = target.values
    target = torch.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if ignore_mask is None:
        ignore = torch.zeros(pred.shape[:-1], dtype=torch.bool)
    else:
        ignore = torch.as_tensor(ignore_mask, dtype=torch.bool)
        if ignore.shape != pred.shape[:-1]:
            raise ShapeError(f"ignore mask {tuple(ignore.shape)} vs cells {tuple(pred.shape[:-1])}")

    resp = target[..., 0] > 0.5
    noobj_cells = ~resp & ~ignore
    zero = pred.sum() * 0.0

    x_err = (torch.sigmoid(pred[..., 1]) - target[..., 1]) ** 2
    w_err = (pred[..., 2] - target[..., 2]) ** 2
    coord = torch.where(resp, x_err + w_err, zero).sum()
    # BCE(sigmoid(z), 1) = softplus(-z); BCE(sigmoid(z), 0) = softplus(z)
    obj = torch.where(resp, F.softplus(-pred[..., 0]), zero).sum()
    noobj = torch.where(noobj_cells, F.softplus(pred[..., 0]), zero).sum()
    cls_bce = F.binary_cross_entropy_with_logits(pred[..., 3:], target[..., 3:], reduction="none").sum(-1)
    cls = torch.where(resp, cls_bce, zero).sum()

    total = weights.coord * coord + obj + weights.noobj * noobj + cls
    return LossBreakdown(total, coord, obj, noobj, cls, int(resp.sum()))


def baseline_loss(logits: torch.Tensor, frame_labels) -> torch.Tensor:
    labels = torch.as_tensor(np.asarray(frame_labels), dtype=logits.dtype)
    if logits.shape != labels.shape:
        raise ShapeError(f"logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    return F.binary_cross_entropy_with_logits(logits, labels, reduction="mean")


def frame_centers(n_frames: int = CLIP_FRAMES) -> np.ndarray:
    return np.arange(n_frames) * HOP / SAMPLE_RATE + (HOP / 2) / SAMPLE_RATE


def frame_labels_from_instances(instances, n_classes: int, n_frames: int = CLIP_FRAMES) -> np.ndarray:
    centers = frame_centers(n_frames)
    labels = np.zeros((n_classes, n_frames), dtype=bool)
    for inst in instances:
        iv = inst.interval
        labels[inst.class_id] |= (centers >= iv.start) & (centers <= iv.end)
    return labels
