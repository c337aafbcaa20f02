"""Experiment stages shared by the command line and the acceptance harness.

Every stage reads and writes inside one working directory::

    corpus/             audio root (synth output, or point ``audio_root`` elsewhere)
    anchors.txt         fitted anchor widths
    anchors.json        K-means fit report
    prepared/           windowed clips, CQTs and targets
    run/best.ckpt       best-validation checkpoint
    run/train_log.csv   per-epoch TrainLog
    thresholds.json     tuned per-class confidence / NMS thresholds
    report_<split>.json evaluation report
    detections.jsonl    recording-level detections
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .anchors import AnchorFitReport, kmeans_anchor_widths, save_anchors
from .dataset import DEFAULT_CLASSES, ClipIndexEntry, SplitConfig, load_annotations, split_key, window_clips
from .errors import ConfigError
from .evaluation import CONF_GRID, ThresholdChoice, evaluation_report, tune_thresholds, write_report
from .geometry import Detection
from .infer import act_clips, infer_clips, write_detections
from .model import load_checkpoint
from .plot import emit_plot
from .prepared import _clip_cqt, list_acts, load_prepared, prepare
from .synth import SynthConfig, write_corpus
from .train import RunConfig, TrainLog, clip_detections, predict, split_indices, train_loop

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    """Top-level JSON config. Relative paths resolve against the working directory."""

    seed: int = 0
    split_mode: str = "version"
    synth: dict | None = None
    class_names: list | None = None
    audio_root: str = "corpus"
    annotations: str = "corpus/annotations.csv"
    splits: str = "corpus/splits.json"
    n_anchors: int = 3
    train: dict = field(default_factory=dict)
    match_iou: float = 0.5

    def __post_init__(self):
        if self.split_mode not in ("version", "act"):
            raise ConfigError(f"split mode must be 'version' or 'act', got {self.split_mode!r}")
        unknown = set(self.train) - set(RunConfig.__dataclass_fields__) - {"prepared", "splits", "out_dir"}
        if unknown:
            raise ConfigError(f"unknown train settings {sorted(unknown)}")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def synth_config(self) -> SynthConfig:
        return SynthConfig.from_dict(self.synth or {})

    def names(self) -> list[str]:
        if self.class_names:
            return list(self.class_names)
        if self.synth is not None:
            return list(self.synth_config().class_names)
        return list(DEFAULT_CLASSES)


class Workspace:
    def __init__(self, root, cfg: ExperimentConfig):
        self.root = Path(root)
        self.cfg = cfg

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    audio_root = property(lambda self: self.path(self.cfg.audio_root))
    annotations = property(lambda self: self.path(self.cfg.annotations))
    splits = property(lambda self: self.path(self.cfg.splits))
    anchors = property(lambda self: self.root / "anchors.txt")
    prepared = property(lambda self: self.root / "prepared")
    run_dir = property(lambda self: self.root / "run")
    checkpoint = property(lambda self: self.root / "run" / "best.ckpt")
    thresholds = property(lambda self: self.root / "thresholds.json")

    def split_config(self) -> SplitConfig:
        if not self.splits.exists():
            raise ConfigError(f"splits file not found: {self.splits}")
        sp = SplitConfig.load(self.splits)
        if sp.mode != self.cfg.split_mode:
            raise ConfigError(f"{self.splits} holds a {sp.mode} split, but a {self.cfg.split_mode} split was requested")
        return sp


def stage_synth(ws: Workspace, wav: bool = False) -> dict:
    if ws.cfg.synth is None:
        raise ConfigError("config has no 'synth' section")
    manifest = write_corpus(ws.audio_root, ws.cfg.synth_config(), ws.cfg.seed, wav=wav, split_mode=ws.cfg.split_mode)
    logger.info("synthesized %d clips, %d instances", manifest["n_clips"], manifest["n_instances"])
    return manifest


def stage_anchors(ws: Workspace) -> AnchorFitReport:
    """Fit anchor widths on training-split instance durations only."""
    sp = ws.split_config()
    members = set(sp.train) | set(sp.val) | set(sp.test)
    insts = load_annotations(ws.annotations, ws.cfg.names())
    widths = [i.interval.width for i in insts if split_key(sp.mode, i.recording_id, i.act_id, members) in sp.train]
    rep = kmeans_anchor_widths(widths, ws.cfg.n_anchors, ws.cfg.seed)
    ws.root.mkdir(parents=True, exist_ok=True)
    save_anchors(ws.anchors, rep.anchors)
    (ws.root / "anchors.json").write_text(json.dumps({
        "anchors": list(rep.anchors.widths), "mean_best_iou": rep.mean_best_iou,
        "iterations": rep.iterations, "objective": rep.objective, "n_widths": len(widths)}, indent=2) + "\n")
    logger.info("anchors %s (mean best IoU %.3f)", rep.anchors.widths, rep.mean_best_iou)
    return rep


def stage_prepare(ws: Workspace):
    return prepare(ws.audio_root, ws.annotations, ws.anchors, ws.prepared, ws.cfg.names())


def run_config(ws: Workspace) -> RunConfig:
    raw = {"seed": ws.cfg.seed, **ws.cfg.train}
    raw.update(prepared=str(ws.prepared), splits=str(ws.splits), out_dir=str(ws.run_dir),
               split_mode=ws.cfg.split_mode)
    return RunConfig(**raw)


def stage_train(ws: Workspace) -> tuple[Path, TrainLog]:
    return train_loop(run_config(ws), load_prepared(ws.prepared), ws.split_config())


def split_detections(ws: Workspace, split: str, min_score: float = 0.0):
    """Clip-level (pre-NMS) detections and ground truths for one split of the prepared data."""
    data = load_prepared(ws.prepared)
    parts = dict(zip(("train", "val", "test"), split_indices(data, ws.split_config())))
    if split not in parts:
        raise ConfigError(f"unknown split {split!r}")
    idx = parts[split]
    model, _ = load_checkpoint(ws.checkpoint, n_classes=data.n_classes, n_anchors=len(data.anchors))
    preds = predict(model, data.cqt, idx)
    dets, gts = clip_detections(data, preds, idx, min_score, model.cfg.class_activation)
    return dets, gts, data


def stage_tune(ws: Workspace) -> ThresholdChoice:
    # detections below the smallest grid confidence can never be kept, so skip decoding them
    dets, gts, data = split_detections(ws, "val", min_score=CONF_GRID[0])
    choice = tune_thresholds(dets, gts, data.n_classes, match_iou=ws.cfg.match_iou)
    ws.thresholds.write_text(json.dumps(choice.to_json(), indent=2, sort_keys=True) + "\n")
    return choice


def load_thresholds(ws: Workspace) -> ThresholdChoice:
    if not ws.thresholds.exists():
        raise ConfigError(f"no tuned thresholds at {ws.thresholds}; run 'tune' first")
    return ThresholdChoice.from_json(json.loads(ws.thresholds.read_text()))


def stage_evaluate(ws: Workspace, split: str = "test") -> dict:
    choice = load_thresholds(ws)
    dets, gts, data = split_detections(ws, split, min_score=1e-3)
    report = evaluation_report(dets, gts, choice, data.class_names, ws.cfg.match_iou)
    report["split"] = split
    write_report(ws.root / f"report_{split}.json", report)
    return report


def stage_infer(ws: Workspace, split: str | None = "test", out=None) -> Path:
    """Recording-level detections for every act of ``split`` (or all acts when None)."""
    acts = list_acts(ws.audio_root)
    if split is not None:
        sp = ws.split_config()
        members = set(sp.train) | set(sp.val) | set(sp.test)
        wanted = set(getattr(sp, split))
        acts = [a for a in acts if split_key(sp.mode, a[0], a[1], members) in wanted]
    _, meta = load_checkpoint(ws.checkpoint)
    dets = infer_clips(ws.checkpoint, list(act_clips(ws.audio_root, acts)), load_thresholds(ws))
    out = Path(out) if out else ws.root / "detections.jsonl"
    write_detections(out, dets, meta["class_names"])
    logger.info("wrote %d detections for %d acts to %s", len(dets), len(acts), out)
    return out


def stage_plot(ws: Workspace, recording_id: str, act_id: str, origin: float = 0.0, out=None) -> Path:
    """Plot one 15 s clip with its ground truth and thresholded detections."""
    names = ws.cfg.names()
    cqt = _clip_cqt(ws.audio_root, ClipIndexEntry(recording_id, act_id, origin), {})
    dur = {(r, a): d for r, a, d in list_acts(ws.audio_root)}.get((recording_id, act_id))
    if dur is None:
        raise ConfigError(f"unknown act {recording_id}/{act_id}")
    insts = [i for i in load_annotations(ws.annotations, names)
             if (i.recording_id, i.act_id) == (recording_id, act_id)]
    gts = next((c.instances for c in window_clips(max(dur, 15.0), insts, recording_id, act_id)
                if c.origin_sec == origin), [])
    dets = infer_clips(ws.checkpoint, [(recording_id, act_id, origin, cqt)], load_thresholds(ws))
    shown = [Detection(d.class_id, d.score, d.clip_interval) for d in dets]
    out = Path(out) if out else ws.root / "plots" / f"{recording_id}_{act_id}_{origin:g}.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_plot(cqt, shown, gts, out, class_names=names, title=f"{recording_id}/{act_id} @ {origin:g}s")
    return out


def run_all(ws: Workspace, synth: bool = True) -> dict:
    """synth → anchors → prepare → train → tune → evaluate(val, test) → infer(test)."""
    if synth:
        stage_synth(ws)
    stage_anchors(ws)
    stage_prepare(ws)
    ckpt, log = stage_train(ws)
    stage_tune(ws)
    val = stage_evaluate(ws, "val")
    test = stage_evaluate(ws, "test")
    stage_infer(ws, "test")
    return {"checkpoint": str(ckpt), "best_epoch": log.best_epoch, "best_val_map50": log.best_val_map50,
            "epochs_run": len(log.rows), "val": val, "test": test}
