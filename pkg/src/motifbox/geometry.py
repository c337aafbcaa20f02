"""Interval math for 1D boundary regression: IoU, grid/anchor coding, NMS.

A clip of ``clip_len`` seconds is split into ``n_grids`` equal cells. Each
(anchor, cell) slot predicts ``(p, x, w)``: objectness, the boundary center as
an offset inside the cell, and a log-scale residual on the anchor width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import DomainError, OutOfClipError, RangeError

CLIP_LEN = 15.0
N_GRIDS = 11


@dataclass(frozen=True, order=True)
class Interval:
    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise DomainError(f"non-finite interval [{self.start}, {self.end}]")
        if not self.end > self.start:
            raise DomainError(f"interval end {self.end} must exceed start {self.start}")

    @property
    def width(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)

    def shift(self, dt: float) -> "Interval":
        return Interval(self.start + dt, self.end + dt)


@dataclass(frozen=True)
class GridSpec:
    n_grids: int = N_GRIDS
    clip_len: float = CLIP_LEN

    def __post_init__(self):
        if self.n_grids < 1:
            raise DomainError("n_grids must be >= 1")
        if not self.clip_len > 0:
            raise DomainError("clip_len must be positive")

    @property
    def cell_width(self) -> float:
        return self.clip_len / self.n_grids


@dataclass(frozen=True)
class AnchorSet:
    widths: tuple[float, ...]

    def __post_init__(self):
        widths = tuple(float(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if not widths:
            raise DomainError("anchor set is empty")
        if any(not w > 0 for w in widths):
            raise DomainError(f"anchor widths must be positive: {widths}")
        if any(b <= a for a, b in zip(widths, widths[1:])):
            raise DomainError(f"anchor widths must be strictly increasing: {widths}")

    def __len__(self) -> int:
        return len(self.widths)

    def __getitem__(self, i: int) -> float:
        return self.widths[i]


@dataclass(frozen=True)
class CellCode:
    anchor_idx: int
    grid_idx: int
    x: float
    w: float
    class_id: int
    anchor_iou: float = 1.0


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    interval: Interval
    # Detections with different keys (clip or recording ids) never interact.
    key: Hashable = field(default=(), compare=True)

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise RangeError(f"detection score {self.score} outside [0, 1]")


def iou(a: Interval, b: Interval) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    return inter / (a.width + b.width - inter)


def width_iou(w1: float, w2: float) -> float:
    """IoU of two co-centered intervals, i.e. the min/max width ratio."""
    return min(w1, w2) / max(w1, w2)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def logit(p: float) -> float:
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return math.log(p / (1.0 - p))


def best_anchor(width: float, anchors: AnchorSet) -> tuple[int, float]:
    ious = [width_iou(width, a) for a in anchors.widths]
    idx = int(np.argmax(ious))
    return idx, ious[idx]


def encode_instance(inst: Interval, grid: GridSpec, anchors: AnchorSet, class_id: int) -> CellCode:
    center = inst.center
    if not 0.0 <= center < grid.clip_len:
        raise OutOfClipError(f"interval center {center:.6f}s outside [0, {grid.clip_len})")
    pos = center / grid.cell_width
    grid_idx = min(int(math.floor(pos)), grid.n_grids - 1)
    x = pos - grid_idx
    anchor_idx, a_iou = best_anchor(inst.width, anchors)
    w = math.log(inst.width / anchors[anchor_idx])
    return CellCode(anchor_idx, grid_idx, x, w, class_id, a_iou)


def class_probs(class_logits, activation: str = "sigmoid") -> np.ndarray:
    z = np.asarray(class_logits, dtype=np.float64)
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown class activation {activation!r}")


def decode_cell(
    raw_p: float,
    raw_x: float,
    raw_w: float,
    class_logits: Sequence[float],
    anchor_idx: int,
    grid_idx: int,
    grid: GridSpec,
    anchors: AnchorSet,
    class_activation: str = "sigmoid",
    key: Hashable = (),
) -> Detection:
    p = float(sigmoid(raw_p))
    x = float(sigmoid(raw_x))
    width = anchors[anchor_idx] * math.exp(raw_w)
    center = (grid_idx + x) * grid.cell_width
    probs = class_probs(class_logits, class_activation)
    class_id = int(np.argmax(probs))
    score = min(1.0, max(0.0, p * float(probs[class_id])))
    return Detection(class_id, score, Interval(center - width / 2, center + width / 2), key)


def decode_tensor(
    pred: np.ndarray,
    grid: GridSpec,
    anchors: AnchorSet,
    min_score: float = 0.0,
    class_activation: str = "sigmoid",
    key: Hashable = (),
) -> list[Detection]:
    """Vectorized decode of a raw ``n x n_grids x (3 + C)`` prediction tensor."""
    pred = np.asarray(pred, dtype=np.float64)
    n, g, _ = pred.shape
    if n != len(anchors) or g != grid.n_grids:
        raise DomainError(f"prediction shape {pred.shape} does not match {len(anchors)} anchors x {grid.n_grids} grids")
    p = sigmoid(pred[..., 0])
    x = sigmoid(pred[..., 1])
    # clip keeps exp finite for untrained nets
    width = np.asarray(anchors.widths)[:, None] * np.exp(np.clip(pred[..., 2], -30.0, 30.0))
    center = (np.arange(g)[None, :] + x) * grid.cell_width
    probs = class_probs(pred[..., 3:], class_activation)
    cls = probs.argmax(axis=-1)
    score = np.clip(p * np.take_along_axis(probs, cls[..., None], axis=-1)[..., 0], 0.0, 1.0)
    dets = []
    for a in range(n):
        for j in range(g):
            if score[a, j] < min_score:
                continue
            half = width[a, j] / 2
            dets.append(Detection(int(cls[a, j]), float(score[a, j]),
                                  Interval(float(center[a, j] - half), float(center[a, j] + half)), key))
    return dets


def sort_key(d: Detection):
    return (-d.score, d.interval.start, d.class_id)


def nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Class-wise greedy suppression; survivors sorted by descending score."""
    groups: dict = {}
    for d in sorted(dets, key=sort_key):
        groups.setdefault((d.key, d.class_id), []).append(d)
    keep = []
    for members in groups.values():
        if len(members) == 1:
            keep.extend(members)
            continue
        starts = np.array([d.interval.start for d in members])
        ends = np.array([d.interval.end for d in members])
        widths = ends - starts
        alive = np.ones(len(members), dtype=bool)
        for i in range(len(members)):
            if not alive[i]:
                continue
            keep.append(members[i])
            rest = slice(i + 1, None)
            inter = np.minimum(ends[rest], ends[i]) - np.maximum(starts[rest], starts[i])
            inter = np.maximum(inter, 0.0)
            ious = np.where(inter > 0, inter / (widths[rest] + widths[i] - inter), 0.0)
            alive[rest] &= ~(ious > iou_thresh)
    keep.sort(key=sort_key)
    return keep
