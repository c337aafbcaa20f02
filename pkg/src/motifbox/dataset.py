"""Annotations, clip windowing, target tensors and train/val/test splits."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidIntervalError, SchemaError
from .geometry import AnchorSet, GridSpec, Interval, encode_instance, iou

logger = logging.getLogger(__name__)

# Class tags of the 13 evaluated motifs, in reporting order.
DEFAULT_CLASSES = ("Ni", "Ri", "NH", "RT", "Wa", "WL", "Ho", "Sc", "WH", "Fe", "Un", "Si", "Ve")
ANNOTATION_COLUMNS = ("recording_id", "act_id", "motif", "start_sec", "end_sec")

CLIP_LEN = 15.0
CLIP_HOP = 1.0
MIN_OVERLAP = 0.5
IGNORE_IOU = 0.5


@dataclass(frozen=True)
class MotifInstance:
    recording_id: str
    act_id: str
    class_id: int
    interval: Interval
    # set for clip-relative instances: origin of the owning clip within the act
    clip_origin: float | None = None

    @property
    def key(self) -> tuple:
        if self.clip_origin is None:
            return (self.recording_id, self.act_id)
        return (self.recording_id, self.act_id, self.clip_origin)


@dataclass
class ClipIndexEntry:
    recording_id: str
    act_id: str
    origin_sec: float
    instances: list[MotifInstance] = field(default_factory=list)

    @property
    def key(self) -> tuple:
        return (self.recording_id, self.act_id, self.origin_sec)


@dataclass
class TargetTensor:
    values: np.ndarray  # (n_anchors, n_grids, 3 + C): p, x, w, one-hot class
    ignore_mask: np.ndarray  # (n_anchors, n_grids) bool
    n_dropped: int = 0

    @property
    def n_set(self) -> int:
        return int(self.values[..., 0].sum())


@dataclass
class SplitConfig:
    mode: str
    train: list[str]
    val: list[str]
    test: list[str]

    def __post_init__(self):
        if self.mode not in ("version", "act"):
            raise ConfigError(f"split mode must be 'version' or 'act', got {self.mode!r}")
        sets = {"train": set(self.train), "val": set(self.val), "test": set(self.test)}
        for name, ids in sets.items():
            if not ids:
                raise ConfigError(f"split membership {name!r} is empty")
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            shared = sets[a] & sets[b]
            if shared:
                raise ConfigError(f"ids {sorted(shared)} appear in both {a} and {b}")

    @classmethod
    def load(cls, path) -> "SplitConfig":
        raw = json.loads(Path(path).read_text())
        return cls(raw.get("mode", "version"), list(raw["train"]), list(raw["val"]), list(raw["test"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(
            {"mode": self.mode, "train": self.train, "val": self.val, "test": self.test}, indent=2) + "\n")


def load_annotations(path, class_names: Sequence[str] = DEFAULT_CLASSES) -> list[MotifInstance]:
    index = {name: i for i, name in enumerate(class_names)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        header = [h.strip() for h in header]
        missing = [c for c in ANNOTATION_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: header lacks columns {missing}")
        col = {c: header.index(c) for c in ANNOTATION_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                motif = row[col["motif"]].strip()
                start = float(row[col["start_sec"]])
                end = float(row[col["end_sec"]])
            except (IndexError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if motif not in index:
                raise SchemaError(f"{path}:{lineno}: unknown motif {motif!r}")
            if not (math.isfinite(start) and math.isfinite(end)) or end <= start:
                raise InvalidIntervalError(f"{path}:{lineno}: end {end} <= start {start}")
            out.append(MotifInstance(row[col["recording_id"]].strip(), row[col["act_id"]].strip(),
                                     index[motif], Interval(start, end)))
    return out


def write_annotations(path, instances: Iterable[MotifInstance], class_names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS)
        for inst in instances:
            writer.writerow([inst.recording_id, inst.act_id, class_names[inst.class_id],
                             repr(inst.interval.start), repr(inst.interval.end)])


def group_by_act(instances: Iterable[MotifInstance]) -> dict[tuple[str, str], list[MotifInstance]]:
    acts: dict[tuple[str, str], list[MotifInstance]] = {}
    for inst in instances:
        acts.setdefault((inst.recording_id, inst.act_id), []).append(inst)
    return acts


def clip_origins(act_len: float, clip_len: float = CLIP_LEN, hop: float = CLIP_HOP) -> np.ndarray:
    if act_len < clip_len:
        return np.zeros(0)
    n = int(math.floor((act_len - clip_len) / hop + 1e-9)) + 1
    return np.arange(n) * hop


def attaches(interval: Interval, origin: float, clip_len: float = CLIP_LEN) -> bool:
    # center strictly inside the window, and at least half the duration inside it
    c = interval.center
    if not origin < c < origin + clip_len:
        return False
    inside = min(interval.end, origin + clip_len) - max(interval.start, origin)
    return inside >= MIN_OVERLAP * interval.width


def window_clips(
    act_len: float,
    instances: Sequence[MotifInstance],
    recording_id: str | None = None,
    act_id: str | None = None,
    clip_len: float = CLIP_LEN,
    hop: float = CLIP_HOP,
) -> list[ClipIndexEntry]:
    if recording_id is None:
        recording_id = instances[0].recording_id if instances else ""
    if act_id is None:
        act_id = instances[0].act_id if instances else ""
    if act_len < clip_len:
        logger.warning("act %s/%s is %.2fs long (< %.0fs); skipped", recording_id, act_id, act_len, clip_len)
        return []
    origins = clip_origins(act_len, clip_len, hop)
    entries = [ClipIndexEntry(recording_id, act_id, float(o)) for o in origins]
    for inst in instances:
        c = inst.interval.center
        lo = max(0, int(math.floor((c - clip_len) / hop)))
        hi = min(len(origins) - 1, int(math.ceil(c / hop)))
        for i in range(lo, hi + 1):
            o = float(origins[i])
            if not attaches(inst.interval, o, clip_len):
                continue
            rel = Interval(max(inst.interval.start - o, 0.0), min(inst.interval.end - o, clip_len))
            entries[i].instances.append(MotifInstance(recording_id, act_id, inst.class_id, rel, o))
    return entries


def build_targets(entry: ClipIndexEntry, grid: GridSpec, anchors: AnchorSet, n_classes: int) -> TargetTensor:
    n, g = len(anchors), grid.n_grids
    values = np.zeros((n, g, 3 + n_classes))
    ignore = np.zeros((n, g), dtype=bool)
    winners: dict[tuple[int, int], tuple] = {}
    for inst in entry.instances:
        code = encode_instance(inst.interval, grid, anchors, inst.class_id)
        cell = (code.anchor_idx, code.grid_idx)
        rank = (code.anchor_iou, -inst.interval.start, -inst.class_id)
        if cell not in winners or rank > winners[cell][0]:
            winners[cell] = (rank, code)
    for (a, j), (_, code) in winners.items():
        values[a, j, 0] = 1.0
        values[a, j, 1] = code.x
        values[a, j, 2] = code.w
        values[a, j, 3 + code.class_id] = 1.0
    dropped = len(entry.instances) - len(winners)
    if dropped:
        logger.debug("clip %s: %d instance(s) lost a cell conflict", entry.key, dropped)
    if entry.instances:
        for a, width in enumerate(anchors.widths):
            for j in range(g):
                if values[a, j, 0]:
                    continue
                c = (j + 0.5) * grid.cell_width
                prior = Interval(c - width / 2, c + width / 2)
                ignore[a, j] = any(iou(prior, inst.interval) > IGNORE_IOU for inst in entry.instances)
    return TargetTensor(values, ignore, dropped)


def split_key(mode: str, recording_id: str, act_id: str, members: set[str]) -> str:
    if mode == "version":
        return recording_id
    qualified = f"{recording_id}/{act_id}"
    return qualified if qualified in members else act_id


def split_dataset(clips: Sequence[ClipIndexEntry], cfg: SplitConfig):
    """Partition clips into (train, val, test) by recording or act id."""
    sets = {"train": set(cfg.train), "val": set(cfg.val), "test": set(cfg.test)}
    every = set().union(*sets.values())
    out = {"train": [], "val": [], "test": []}
    for clip in clips:
        key = split_key(cfg.mode, clip.recording_id, clip.act_id, every)
        for name, ids in sets.items():
            if key in ids:
                out[name].append(clip)
                break
        else:
            raise ConfigError(f"{cfg.mode} id {key!r} is not assigned to any split")
    return out["train"], out["val"], out["test"]
