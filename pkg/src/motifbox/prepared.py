"""On-disk prepared dataset: windowed clips, their CQTs, and target tensors.

Layout of a prepared directory::

    index.json    clip entries, class names, anchors, grid
    cqt.npy       float32 (N, 84, 646)
    targets.npy   float32 (N, n_anchors, n_grids, 3 + C)
    ignore.npy    bool    (N, n_anchors, n_grids)
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anchors import load_anchors
from .audio import CLIP_FRAMES, CLIP_SAMPLES, SAMPLE_RATE, cqt, load_wav, read_cqt
from .dataset import (ClipIndexEntry, MotifInstance, build_targets, group_by_act, load_annotations,
                      window_clips)
from .errors import ConfigError
from .geometry import AnchorSet, GridSpec, Interval

logger = logging.getLogger(__name__)


@dataclass
class PreparedData:
    entries: list[ClipIndexEntry]
    cqt: np.ndarray
    targets: np.ndarray
    ignore: np.ndarray
    class_names: list[str]
    anchors: AnchorSet
    grid: GridSpec

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def _entry_to_json(e: ClipIndexEntry) -> dict:
    return {
        "recording_id": e.recording_id,
        "act_id": e.act_id,
        "origin_sec": e.origin_sec,
        "instances": [[i.class_id, i.interval.start, i.interval.end] for i in e.instances],
    }


def _entry_from_json(raw: dict) -> ClipIndexEntry:
    rec, act, o = raw["recording_id"], raw["act_id"], float(raw["origin_sec"])
    insts = [MotifInstance(rec, act, int(c), Interval(s, e), o) for c, s, e in raw["instances"]]
    return ClipIndexEntry(rec, act, o, insts)


def list_acts(audio_root) -> list[tuple[str, str, float]]:
    """(recording_id, act_id, duration) from acts.csv, else from WAVs under root/<rec>/<act>.wav."""
    root = Path(audio_root)
    if (root / "acts.csv").exists():
        with open(root / "acts.csv", newline="") as fh:
            return [(r["recording_id"], r["act_id"], float(r["duration_sec"])) for r in csv.DictReader(fh)]
    acts = []
    for wav in sorted(root.glob("*/*.wav")):
        clip = load_wav(wav)
        acts.append((wav.parent.name, wav.stem, clip.duration))
    return acts


def _clip_cqt(root: Path, entry: ClipIndexEntry, cache: dict) -> np.ndarray:
    cached = root / "cqt" / entry.recording_id / f"{entry.act_id}.cqt"
    if cached.exists() and entry.origin_sec == 0.0:
        values = read_cqt(cached).values
        if values.shape[1] == CLIP_FRAMES:
            return values
    wav = root / "wav" / entry.recording_id / f"{entry.act_id}.wav"
    if not wav.exists():
        wav = root / entry.recording_id / f"{entry.act_id}.wav"
    if not wav.exists():
        raise ConfigError(f"no audio for {entry.recording_id}/{entry.act_id} under {root}")
    key = (entry.recording_id, entry.act_id)
    if key not in cache:
        cache.clear()
        cache[key] = load_wav(wav).samples
    s = int(round(entry.origin_sec * SAMPLE_RATE))
    seg = cache[key][s:s + CLIP_SAMPLES]
    seg = np.pad(seg, (0, CLIP_SAMPLES - len(seg)))
    return cqt(seg).values


def prepare(audio_root, annotations, anchors_path, out_dir, class_names, grid: GridSpec = GridSpec()) -> PreparedData:
    root = Path(audio_root)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    anchors = load_anchors(anchors_path)
    instances = load_annotations(annotations, class_names)
    by_act = group_by_act(instances)
    entries = []
    for rec, act, dur in list_acts(root):
        entries.extend(window_clips(dur, by_act.get((rec, act), []), rec, act))
    n, C = len(entries), len(class_names)
    cqts = np.lib.format.open_memmap(out / "cqt.npy", mode="w+", dtype=np.float32, shape=(n, 84, CLIP_FRAMES))
    targets = np.zeros((n, len(anchors), grid.n_grids, 3 + C), dtype=np.float32)
    ignore = np.zeros((n, len(anchors), grid.n_grids), dtype=bool)
    cache: dict = {}
    dropped = 0
    for i, e in enumerate(entries):
        cqts[i] = _clip_cqt(root, e, cache)
        t = build_targets(e, grid, anchors, C)
        targets[i], ignore[i] = t.values, t.ignore_mask
        dropped += t.n_dropped
    cqts.flush()
    del cqts
    np.save(out / "targets.npy", targets)
    np.save(out / "ignore.npy", ignore)
    index = {
        "class_names": list(class_names),
        "anchors": list(anchors.widths),
        "grid": {"n_grids": grid.n_grids, "clip_len": grid.clip_len},
        "dropped_instances": dropped,
        "clips": [_entry_to_json(e) for e in entries],
    }
    (out / "index.json").write_text(json.dumps(index) + "\n")
    logger.info("prepared %d clips (%d instances dropped by cell conflicts)", n, dropped)
    return load_prepared(out)


def load_prepared(path) -> PreparedData:
    p = Path(path)
    if not (p / "index.json").exists():
        raise ConfigError(f"{p} is not a prepared dataset (index.json missing)")
    index = json.loads((p / "index.json").read_text())
    return PreparedData(
        entries=[_entry_from_json(c) for c in index["clips"]],
        cqt=np.load(p / "cqt.npy", mmap_mode="r"),
        targets=np.load(p / "targets.npy"),
        ignore=np.load(p / "ignore.npy"),
        class_names=index["class_names"],
        anchors=AnchorSet(tuple(index["anchors"])),
        grid=GridSpec(**index["grid"]),
    )
