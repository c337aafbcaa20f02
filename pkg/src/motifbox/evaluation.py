"""Boundary-wise matching, F1, AP/mAP and per-class threshold search.

Ground truths and detections carry a ``key`` (clip or recording identity);
nothing is matched or suppressed across keys.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Detection, iou, nms, sort_key

CONF_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
NMS_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
COCO_IOUS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class MatchResult:
    tp: dict = field(default_factory=lambda: defaultdict(int))
    fp: dict = field(default_factory=lambda: defaultdict(int))
    fn: dict = field(default_factory=lambda: defaultdict(int))
    pairs: list = field(default_factory=list)  # (detection, ground truth, iou)
    # true-positive flag per detection, in sorted (score-descending) order
    ordered: list = field(default_factory=list)

    def classes(self) -> list[int]:
        return sorted(set(self.tp) | set(self.fp) | set(self.fn))


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float


@dataclass
class ThresholdChoice:
    confidence: dict  # class_id -> threshold
    nms_iou: dict
    f1: dict  # class_id -> achieved F1 (None when undefined)

    def to_json(self) -> dict:
        return {str(c): {"confidence": self.confidence[c], "nms_iou": self.nms_iou[c], "f1": self.f1[c]}
                for c in sorted(self.confidence)}

    @classmethod
    def from_json(cls, raw: dict) -> "ThresholdChoice":
        conf, nms_t, f1 = {}, {}, {}
        for c, v in raw.items():
            conf[int(c)], nms_t[int(c)], f1[int(c)] = v["confidence"], v["nms_iou"], v["f1"]
        return cls(conf, nms_t, f1)

    @classmethod
    def uniform(cls, classes, confidence: float = 0.5, nms_iou: float = 0.5) -> "ThresholdChoice":
        return cls({c: confidence for c in classes}, {c: nms_iou for c in classes}, {c: None for c in classes})


def _gt_key(g):
    return getattr(g, "key", ())


def match_detections(dets: Sequence[Detection], gts: Sequence, iou_thresh: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching in descending score order, per key and class."""
    pool = defaultdict(list)
    for g in gts:
        pool[(_gt_key(g), g.class_id)].append(g)
    used = {k: np.zeros(len(v), dtype=bool) for k, v in pool.items()}
    res = MatchResult()
    for d in sorted(dets, key=sort_key):
        k = (d.key, d.class_id)
        best, best_iou = -1, -1.0
        for i, g in enumerate(pool.get(k, ())):
            if used[k][i]:
                continue
            v = iou(d.interval, g.interval)
            if v >= iou_thresh and v > best_iou:
                best, best_iou = i, v
        if best >= 0:
            used[k][best] = True
            res.tp[d.class_id] += 1
            res.pairs.append((d, pool[k][best], best_iou))
            res.ordered.append(True)
        else:
            res.fp[d.class_id] += 1
            res.ordered.append(False)
    for (_, c), flags in used.items():
        res.fn[c] += int((~flags).sum())
    for c in list(res.fn):
        res.tp[c] += 0
        res.fp[c] += 0
    return res


def f1_score(tp: int, fp: int, fn: int) -> float | None:
    denom = 2 * tp + fp + fn
    return None if denom == 0 else 2 * tp / denom


def f1_boundary(m: MatchResult) -> tuple[dict, float | None]:
    """Per-class F1 (classes with no events omitted) and micro-averaged F1."""
    per_class = {}
    for c in m.classes():
        f = f1_score(m.tp[c], m.fp[c], m.fn[c])
        if f is not None:
            per_class[c] = f
    tp = sum(m.tp[c] for c in per_class)
    fp = sum(m.fp[c] for c in per_class)
    fn = sum(m.fn[c] for c in per_class)
    return per_class, f1_score(tp, fp, fn)


def f1_framewise(probs: np.ndarray, labels: np.ndarray, thresholds) -> np.ndarray:
    """Per-class F1 over all frames; NaN for classes with no positives at all."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=bool)
    if probs.shape != labels.shape:
        raise ValueError(f"probs {probs.shape} vs labels {labels.shape}")
    th = np.broadcast_to(np.asarray(thresholds, dtype=float), (probs.shape[0],))
    pred = probs >= th.reshape((-1,) + (1,) * (probs.ndim - 1))
    axes = tuple(range(1, probs.ndim))
    tp = (pred & labels).sum(axis=axes)
    fp = (pred & ~labels).sum(axis=axes)
    fn = (~pred & labels).sum(axis=axes)
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), np.nan)


def envelope_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated area under the precision envelope."""
    if len(recall) == 0:
        return 0.0
    env = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * env))


def average_precision(dets: Sequence[Detection], gts: Sequence, class_id: int, iou_thresh: float = 0.5) -> PRCurve | None:
    gts_c = [g for g in gts if g.class_id == class_id]
    if not gts_c:
        return None
    dets_c = sorted((d for d in dets if d.class_id == class_id), key=sort_key)
    m = match_detections(dets_c, gts_c, iou_thresh)
    flags = np.array(m.ordered, dtype=float)
    scores = np.array([d.score for d in dets_c])
    if len(flags) == 0:
        return PRCurve(np.zeros(0), np.zeros(0), 0.0)
    # one operating point per distinct score: the end of each run of tied scores
    last = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    ctp = np.cumsum(flags)[last]
    recall = ctp / len(gts_c)
    precision = ctp / (last + 1)
    return PRCurve(recall, precision, envelope_ap(recall, precision))


def map_summary(dets: Sequence[Detection], gts: Sequence, ious: Sequence[float] = COCO_IOUS) -> dict:
    classes = sorted({g.class_id for g in gts})
    table = {}
    for t in ious:
        table[t] = {c: average_precision(dets, gts, c, t).ap for c in classes}

    def mean_at(t):
        return float(np.mean(list(table[t].values()))) if classes else 0.0

    return {
        "mAP": float(np.mean([mean_at(t) for t in ious])) if classes else 0.0,
        "mAP50": mean_at(0.5) if 0.5 in table else average_map(dets, gts, 0.5),
        "mAP75": mean_at(0.75) if 0.75 in table else average_map(dets, gts, 0.75),
        "ap_table": {f"{t:.2f}": {str(c): v for c, v in row.items()} for t, row in table.items()},
    }


def average_map(dets, gts, iou_thresh: float) -> float:
    classes = sorted({g.class_id for g in gts})
    if not classes:
        return 0.0
    return float(np.mean([average_precision(dets, gts, c, iou_thresh).ap for c in classes]))


def _f1_curve(dets_c: list[Detection], gts_c: list, nms_iou: float, match_iou: float, confs) -> list:
    """F1 at each confidence threshold for one class and NMS threshold.

    Greedy NMS and greedy matching both run in score order, so the result for
    score >= conf is a prefix of the result over all detections.
    """
    kept = nms(dets_c, nms_iou)
    m = match_detections(kept, gts_c, match_iou)
    flags = np.array(m.ordered, dtype=bool)
    scores = np.array([d.score for d in kept])
    n_gt = len(gts_c)
    out = []
    for conf in confs:
        n = int(np.sum(scores >= conf))
        tp = int(flags[:n].sum())
        out.append(f1_score(tp, n - tp, n_gt - tp))
    return out


def tune_thresholds(dets: Sequence[Detection], gts: Sequence, n_classes: int, match_iou: float = 0.5,
                    conf_grid=CONF_GRID, nms_grid=NMS_GRID) -> ThresholdChoice:
    """Per-class grid search maximizing boundary F1.

    Ties go to the higher confidence threshold, then the lower NMS threshold.
    Undefined F1 (no detections and no ground truth) scores as 0.
    """
    if not gts and not dets:
        raise ValueError("empty validation set")
    by_class_d = defaultdict(list)
    by_class_g = defaultdict(list)
    for d in dets:
        by_class_d[d.class_id].append(d)
    for g in gts:
        by_class_g[g.class_id].append(g)
    choice = ThresholdChoice({}, {}, {})
    for c in range(n_classes):
        best = None
        for nms_t in nms_grid:
            curve = _f1_curve(by_class_d[c], by_class_g[c], nms_t, match_iou, conf_grid)
            for conf, f in zip(conf_grid, curve):
                rank = (f if f is not None else 0.0, conf, -nms_t)
                if best is None or rank > best[0]:
                    best = (rank, conf, nms_t, f)
        _, choice.confidence[c], choice.nms_iou[c], choice.f1[c] = best
    return choice


def apply_thresholds(dets: Sequence[Detection], choice: ThresholdChoice) -> list[Detection]:
    by_class = defaultdict(list)
    for d in dets:
        if d.class_id in choice.confidence and d.score >= choice.confidence[d.class_id]:
            by_class[d.class_id].append(d)
    out = []
    for c, ds in by_class.items():
        out.extend(nms(ds, choice.nms_iou[c]))
    out.sort(key=sort_key)
    return out


def evaluation_report(dets: Sequence[Detection], gts: Sequence, choice: ThresholdChoice,
                      class_names: Sequence[str], match_iou: float = 0.5) -> dict:
    """Test-time report: tuned-threshold boundary F1 plus mAP over NMS'd detections."""
    final = apply_thresholds(dets, choice)
    m = match_detections(final, gts, match_iou)
    per_class, micro = f1_boundary(m)
    ranked = []
    for c in sorted(choice.nms_iou):
        ranked.extend(nms([d for d in dets if d.class_id == c], choice.nms_iou[c]))
    summary = map_summary(ranked, gts)
    return {
        "match_iou": match_iou,
        "f1": {class_names[c]: per_class.get(c) for c in range(len(class_names))},
        "micro_f1": micro,
        "mAP": summary["mAP"],
        "mAP50": summary["mAP50"],
        "mAP75": summary["mAP75"],
        "ap_table": {t: {class_names[int(c)]: v for c, v in row.items()}
                     for t, row in summary["ap_table"].items()},
        "thresholds": {class_names[c]: v for c, v in zip(range(len(class_names)),
                       [choice.to_json().get(str(c)) for c in range(len(class_names))])},
        "counts": {class_names[c]: {"tp": m.tp.get(c, 0), "fp": m.fp.get(c, 0), "fn": m.fn.get(c, 0)}
                   for c in range(len(class_names))},
        "n_detections": len(final),
        "n_ground_truth": len(gts),
    }


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
