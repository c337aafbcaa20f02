"""Inference over whole acts: window, detect per clip, then merge across overlapping clips."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .dataset import CLIP_LEN, ClipIndexEntry
from .errors import CompatibilityError
from .evaluation import ThresholdChoice, apply_thresholds
from .geometry import AnchorSet, Detection, GridSpec, Interval, decode_tensor, sort_key
from .model import load_checkpoint
from .prepared import _clip_cqt, list_acts


@dataclass(frozen=True)
class ClipDetection:
    """A detection with both clip-relative and recording-absolute intervals."""

    recording_id: str
    act_id: str
    clip_origin: float
    class_id: int
    score: float
    clip_interval: Interval

    @property
    def interval(self) -> Interval:
        return self.clip_interval.shift(self.clip_origin)

    def absolute(self) -> Detection:
        return Detection(self.class_id, self.score, self.interval, key=(self.recording_id, self.act_id))


def inference_origins(duration: float, clip_len: float = CLIP_LEN, offset_pass: bool = True,
                      hop: float | None = None) -> list[float]:
    """Clip origins covering an act.

    By default: non-overlapping ``clip_len`` hops, plus a second pass shifted by half a clip
    so that motifs cut by a clip border are seen whole at least once. A final window aligned
    to the end of the act covers any remainder. Acts shorter than a clip get one zero-padded
    window at 0. ``hop`` overrides the step (e.g. 1.0 for the training windowing).
    """
    if duration <= clip_len:
        return [0.0]
    last = duration - clip_len
    step = clip_len if hop is None else float(hop)
    origins = set(np.arange(0.0, last + 1e-9, step).tolist())
    if offset_pass and hop is None:
        origins |= set(np.arange(clip_len / 2, last + 1e-9, step).tolist())
    origins.add(last)
    return sorted(float(o) for o in origins)


def detect_clips(model, anchors, clips: Sequence[tuple[str, str, float, np.ndarray]], choice: ThresholdChoice,
                 grid: GridSpec | None = None, batch_size: int = 32) -> list[ClipDetection]:
    """Forward, decode, per-class confidence filter and class-wise NMS, clip by clip."""
    grid = grid or GridSpec(model.cfg.n_grids)
    model.eval()
    dtype = next(model.parameters()).dtype
    out: list[ClipDetection] = []
    with torch.no_grad():
        for s in range(0, len(clips), batch_size):
            chunk = clips[s:s + batch_size]
            x = torch.from_numpy(np.stack([np.asarray(c[3], dtype=np.float32) for c in chunk])).to(dtype)
            preds = model(x).numpy()
            for (rec, act, origin, _), raw in zip(chunk, preds):
                dets = decode_tensor(raw, grid, anchors, 0.0, model.cfg.class_activation, key=(rec, act, origin))
                for d in apply_thresholds(dets, choice):
                    out.append(ClipDetection(rec, act, float(origin), d.class_id, d.score, d.interval))
    model._last_output = None
    return out


def merge_recording(dets: Iterable[ClipDetection], choice: ThresholdChoice) -> list[ClipDetection]:
    """Recording-level NMS across overlapping clips, at the same per-class thresholds."""
    dets = list(dets)
    by_abs = {}
    for d in dets:
        by_abs.setdefault(d.absolute(), d)
    kept = apply_thresholds(list(by_abs), choice)
    return [by_abs[k] for k in kept]


def infer_clips(checkpoint, clips: Sequence[tuple[str, str, float, np.ndarray]], thresholds: ThresholdChoice,
                batch_size: int = 32) -> list[ClipDetection]:
    """Detections for cached CQT clips ``(recording_id, act_id, origin_sec, cqt)``, merged per recording."""
    model, meta = load_checkpoint(checkpoint)
    n_classes = model.cfg.n_classes
    missing = [c for c in range(n_classes) if c not in thresholds.confidence]
    if missing or any(c >= n_classes for c in thresholds.confidence):
        raise CompatibilityError(f"thresholds cover classes {sorted(thresholds.confidence)}, "
                                 f"checkpoint has {n_classes}")
    anchors = AnchorSet(tuple(meta["anchors"]))
    return merge_recording(detect_clips(model, anchors, clips, thresholds, batch_size=batch_size), thresholds)


def act_clips(audio_root, acts: Sequence[tuple[str, str, float]] | None = None, offset_pass: bool = True,
              hop: float | None = None):
    """Yield ``(recording_id, act_id, origin, cqt)`` windows for every act under ``audio_root``."""
    root = Path(audio_root)
    cache: dict = {}
    for rec, act, dur in (acts if acts is not None else list_acts(root)):
        for o in inference_origins(dur, offset_pass=offset_pass, hop=hop):
            yield rec, act, o, _clip_cqt(root, ClipIndexEntry(rec, act, o), cache)


def detection_record(d: ClipDetection, class_names: Sequence[str]) -> dict:
    iv, rel = d.interval, d.clip_interval
    return {
        "recording_id": d.recording_id,
        "act_id": d.act_id,
        "class": class_names[d.class_id],
        "start_sec": iv.start,
        "end_sec": iv.end,
        "score": d.score,
        "clip_origin_sec": d.clip_origin,
        "clip_start_sec": rel.start,
        "clip_end_sec": rel.end,
    }


def write_detections(path, dets: Sequence[ClipDetection], class_names: Sequence[str]) -> None:
    """JSON lines, one detection per line, in a canonical order."""
    order = sorted(dets, key=lambda d: (d.recording_id, d.act_id, d.interval.start, d.class_id, -d.score))
    with open(path, "w") as fh:
        for d in order:
            fh.write(json.dumps(detection_record(d, class_names), sort_keys=True) + "\n")


def read_detections(path, class_names: Sequence[str]) -> list[Detection]:
    """Recording-absolute detections from a JSON-lines file."""
    lookup = {n: i for i, n in enumerate(class_names)}
    out = []
    with open(path) as fh:
        for ln in fh:
            if not ln.strip():
                continue
            r = json.loads(ln)
            out.append(Detection(lookup[r["class"]], float(r["score"]), Interval(r["start_sec"], r["end_sec"]),
                                 key=(r["recording_id"], r["act_id"])))
    out.sort(key=sort_key)
    return out
