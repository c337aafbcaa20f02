import json

import numpy as np
import pytest
import torch
import torch.nn as nn

from motifbox.errors import CompatibilityError
from motifbox.evaluation import ThresholdChoice
from motifbox.geometry import AnchorSet, GridSpec, Interval, decode_cell, iou
from motifbox.infer import (ClipDetection, detect_clips, detection_record, infer_clips, inference_origins,
                            merge_recording, read_detections, write_detections)
from motifbox.model import Detector, DetectorConfig, save_checkpoint

ANCHORS = AnchorSet((1.0, 2.5, 6.0))
NAMES = ["A", "B"]


class Fixed(nn.Module):
    """Stands in for a detector: returns the same raw tensor for every clip."""

    def __init__(self, raw):
        super().__init__()
        self.cfg = DetectorConfig(n_classes=raw.shape[-1] - 3)
        self.raw = torch.as_tensor(raw)
        self.dummy = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return self.raw.expand(x.shape[0], *self.raw.shape).clone()


def low_tensor():
    raw = np.full((3, 11, 5), -8.0)
    return raw


def clip(origin=0.0, rec="v", act="a"):
    return (rec, act, origin, np.zeros((84, 646), dtype=np.float32))


def test_origins():
    assert inference_origins(15.0) == [0.0]
    assert inference_origins(9.0) == [0.0]
    assert inference_origins(30.0) == [0.0, 7.5, 15.0]
    assert inference_origins(40.0) == [0.0, 7.5, 15.0, 22.5, 25.0]
    assert inference_origins(30.0, hop=1.0) == [float(i) for i in range(16)]
    for dur in (15.5, 22.0, 61.3):
        o = inference_origins(dur)
        assert o[0] == 0.0 and o[-1] + 15.0 == pytest.approx(dur)
        assert all(b - a <= 7.5 + 1e-9 for a, b in zip(o, o[1:]))


def test_low_objectness_gives_nothing():
    choice = ThresholdChoice.uniform([0, 1], confidence=0.05)
    assert detect_clips(Fixed(low_tensor()), ANCHORS, [clip()], choice) == []


def test_dominant_cell_decodes_exactly():
    raw = low_tensor()
    raw[1, 4] = [6.0, 0.3, -0.2, -5.0, 4.0]
    choice = ThresholdChoice.uniform([0, 1], confidence=0.5)
    (d,) = detect_clips(Fixed(raw), ANCHORS, [clip(origin=7.5)], choice)
    ref = decode_cell(*raw[1, 4, :3], raw[1, 4, 3:], 1, 4, GridSpec(), ANCHORS)
    assert d.clip_interval == ref.interval and d.class_id == ref.class_id == 1
    assert d.score == pytest.approx(ref.score, abs=1e-15)
    assert d.interval == ref.interval.shift(7.5)


def test_recording_merge_dedups_overlapping_clips():
    choice = ThresholdChoice.uniform([0, 1], confidence=0.3, nms_iou=0.5)
    # the same motif seen from two overlapping windows
    a = ClipDetection("v", "a", 0.0, 0, 0.9, Interval(9.0, 11.0))
    b = ClipDetection("v", "a", 7.5, 0, 0.8, Interval(1.6, 3.5))
    other_act = ClipDetection("v", "b", 0.0, 0, 0.7, Interval(9.0, 11.0))
    kept = merge_recording([a, b, other_act], choice)
    assert kept == [a, other_act]


def test_merge_invariants_random():
    rng = np.random.default_rng(0)
    choice = ThresholdChoice({0: 0.3, 1: 0.6}, {0: 0.4, 1: 0.7}, {})
    dets = []
    for _ in range(300):
        o = float(rng.choice([0.0, 7.5, 15.0]))
        s = rng.uniform(0, 13)
        dets.append(ClipDetection("v", str(rng.integers(2)), o, int(rng.integers(2)), float(rng.random()),
                                  Interval(s, s + rng.uniform(0.3, 2))))
    kept = merge_recording(dets, choice)
    for d in kept:
        assert d.score >= choice.confidence[d.class_id]
    for i, d in enumerate(kept):
        for e in kept[i + 1:]:
            if d.class_id == e.class_id and d.act_id == e.act_id:
                assert iou(d.interval, e.interval) <= choice.nms_iou[d.class_id]


def test_checkpoint_threshold_mismatch(tmp_path):
    m = Detector(DetectorConfig(n_classes=2, channels=(2, 2, 2, 2, 2), depths=(1, 1, 1, 1, 1)))
    save_checkpoint(tmp_path / "m.ckpt", m, ANCHORS.widths, NAMES, {})
    with pytest.raises(CompatibilityError):
        infer_clips(tmp_path / "m.ckpt", [clip()], ThresholdChoice.uniform(range(13)))
    out = infer_clips(tmp_path / "m.ckpt", [clip(), clip(15.0)], ThresholdChoice.uniform([0, 1], 0.95))
    assert all(d.score >= 0.95 for d in out)


def test_detections_roundtrip(tmp_path):
    dets = [ClipDetection("v", "a", 15.0, 1, 0.75, Interval(2.0, 4.5)),
            ClipDetection("v", "a", 0.0, 0, 0.5, Interval(1.0, 2.0))]
    write_detections(tmp_path / "d.jsonl", dets, NAMES)
    lines = (tmp_path / "d.jsonl").read_text().splitlines()
    first = json.loads(lines[0])
    assert {"recording_id", "act_id", "class", "start_sec", "end_sec", "score"} <= set(first)
    assert first["class"] == "A" and first["start_sec"] == 1.0
    rec = detection_record(dets[0], NAMES)
    assert (rec["start_sec"], rec["end_sec"], rec["clip_start_sec"]) == (17.0, 19.5, 2.0)
    back = read_detections(tmp_path / "d.jsonl", NAMES)
    assert sorted(d.interval.start for d in back) == [1.0, 17.0]
    assert {d.key for d in back} == {("v", "a")}
