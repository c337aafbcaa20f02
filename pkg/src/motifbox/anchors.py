"""K-means over boundary widths with the 1 - IoU distance."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateClusterError, DomainError
from .geometry import AnchorSet

MAX_ITER = 300


@dataclass
class AnchorFitReport:
    anchors: AnchorSet
    mean_best_iou: float
    iterations: int
    objective: float
    history: list[float]


def iou_distance(widths: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    w = widths[:, None]
    c = centroids[None, :]
    return 1.0 - np.minimum(w, c) / np.maximum(w, c)


def objective(widths, centroids) -> float:
    return float(iou_distance(np.asarray(widths, float), np.asarray(centroids, float)).min(axis=1).sum())


def _cluster_center(members: np.ndarray) -> float:
    """Member minimizing the summed 1 - IoU distance to the cluster.

    Between consecutive members the cost is concave in log(c), so the optimum
    sits on a member. For sorted w and candidate c = w[i]:
        cost = m - sum(w[:i+1]) / c - c * sum(1 / w[i+1:])
    """
    w = np.sort(members)
    below = np.cumsum(w)
    above = np.cumsum((1.0 / w)[::-1])[::-1]
    above = np.append(above[1:], 0.0)
    cost = len(w) - below / w - w * above
    return float(w[int(np.argmin(cost))])


def lloyd(widths: np.ndarray, init: np.ndarray, rng: np.random.Generator, max_iter: int = MAX_ITER):
    centroids = np.array(init, dtype=float)
    k = len(centroids)
    prev = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        dist = iou_distance(widths, centroids)
        assign = dist.argmin(axis=1)
        history.append(float(dist[np.arange(len(widths)), assign].sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        for j in range(k):
            members = widths[assign == j]
            if len(members):
                centroids[j] = _cluster_center(members)
            else:
                # reseed from the worst-served points, ties broken by the seeded rng
                best = dist[np.arange(len(widths)), assign]
                cand = np.flatnonzero(best == best.max())
                centroids[j] = widths[rng.choice(cand)]
        prev = assign
    return centroids, history, it


def kmeans_anchor_widths(widths, k: int = 3, seed: int = 0) -> AnchorFitReport:
    w = np.asarray(widths, dtype=float).ravel()
    if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
        raise DomainError("all widths must be positive and finite")
    if k < 1 or len(w) < k:
        raise DegenerateClusterError(f"need at least k={k} widths, got {len(w)}")
    if len(np.unique(w)) < k:
        raise DegenerateClusterError(f"k={k} exceeds the {len(np.unique(w))} distinct widths")
    rng = np.random.default_rng(seed)
    init = np.quantile(np.sort(w), (np.arange(k) + 0.5) / k)
    centroids, history, iters = lloyd(w, init, rng)
    centroids = np.sort(centroids)
    if len(np.unique(centroids)) < k:
        raise DegenerateClusterError(f"clustering collapsed to fewer than {k} anchors")
    best_iou = 1.0 - iou_distance(w, centroids).min(axis=1)
    return AnchorFitReport(
        anchors=AnchorSet(tuple(centroids)),
        mean_best_iou=float(best_iou.mean()),
        iterations=iters,
        objective=objective(w, centroids),
        history=history,
    )


def save_anchors(path, anchors: AnchorSet) -> None:
    Path(path).write_text("".join(f"{a!r}\n" for a in anchors.widths))


def load_anchors(path) -> AnchorSet:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    return AnchorSet(tuple(float(ln) for ln in lines))
