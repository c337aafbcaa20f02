"""Training loop with pitch-shift augmentation, validation mAP50 and early stopping."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio import pitch_shift_bins
from .dataset import SplitConfig, split_dataset
from .errors import ConfigError, TrainingDivergedError
from .evaluation import average_map
from .geometry import decode_tensor, nms
from .loss import LossWeights, detection_loss
from .model import Detector, DetectorConfig, save_checkpoint
from .prepared import PreparedData, load_prepared

logger = logging.getLogger(__name__)

MAX_EPOCHS = 120
LOG_FIELDS = ("epoch", "total", "coord", "obj", "noobj", "cls", "val_map50", "lr", "wall_time")


@dataclass
class RunConfig:
    prepared: str = "prepared"
    splits: str = "splits.json"
    out_dir: str = "run"
    detector: dict = field(default_factory=dict)
    loss: dict = field(default_factory=lambda: {"coord": 5.0, "noobj": 0.5})
    optimizer: dict = field(default_factory=lambda: {"method": "adam", "lr": 1e-3, "batch_size": 32})
    max_epochs: int = MAX_EPOCHS
    patience: int = 10
    augment: bool = True
    max_shift: int = 3
    seed: int = 0
    val_nms_iou: float = 0.5
    val_min_score: float = 1e-3
    split_mode: str | None = None

    def __post_init__(self):
        if not 1 <= self.max_epochs <= MAX_EPOCHS:
            raise ConfigError(f"max_epochs must lie in [1, {MAX_EPOCHS}]")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")

    @classmethod
    def load(cls, path) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        base = Path(path).parent
        cfg = cls(**raw)
        for key in ("prepared", "splits", "out_dir"):
            val = Path(getattr(cfg, key))
            if not val.is_absolute():
                setattr(cfg, key, str(base / val))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_map50: float = -1.0
    stopped_early: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows)

    def without_timing(self) -> list[dict]:
        return [{k: v for k, v in r.items() if k != "wall_time"} for r in self.rows]


def predict(model: torch.nn.Module, cqt: np.ndarray, indices, batch_size: int = 64) -> np.ndarray:
    model.eval()
    dtype = next(model.parameters()).dtype
    outs = []
    with torch.no_grad():
        for i in range(0, len(indices), batch_size):
            x = torch.from_numpy(np.asarray(cqt[indices[i:i + batch_size]])).to(dtype)
            outs.append(model(x).numpy())
    model._last_output = None
    return np.concatenate(outs)


def clip_detections(data: PreparedData, preds: np.ndarray, indices, min_score: float = 0.0,
                    class_activation: str = "sigmoid"):
    dets, gts = [], []
    for raw, i in zip(preds, indices):
        e = data.entries[i]
        dets.extend(decode_tensor(raw, data.grid, data.anchors, min_score, class_activation, key=e.key))
        gts.extend(e.instances)
    return dets, gts


def validation_map50(model, data: PreparedData, indices, nms_iou: float, min_score: float) -> float:
    preds = predict(model, data.cqt, indices)
    dets, gts = clip_detections(data, preds, indices, min_score, model.cfg.class_activation)
    return average_map(nms(dets, nms_iou), gts, 0.5)


def split_indices(data: PreparedData, splits: SplitConfig):
    pos = {id(e): i for i, e in enumerate(data.entries)}
    return tuple(np.array([pos[id(e)] for e in part], dtype=int) for part in split_dataset(data.entries, splits))


def train_loop(cfg: RunConfig, data: PreparedData | None = None, splits: SplitConfig | None = None):
    """Train a detector; returns (best checkpoint path, TrainLog)."""
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data is None:
        if not Path(cfg.prepared, "index.json").exists():
            raise ConfigError(f"prepared dataset not found at {cfg.prepared}")
        data = load_prepared(cfg.prepared)
    if splits is None:
        if not Path(cfg.splits).exists():
            raise ConfigError(f"splits file not found: {cfg.splits}")
        splits = SplitConfig.load(cfg.splits)
    if cfg.split_mode and cfg.split_mode != splits.mode:
        raise ConfigError(f"run asks for a {cfg.split_mode} split but {cfg.splits} is a {splits.mode} split")
    train_idx, val_idx, _ = split_indices(data, splits)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ConfigError("training and validation splits must both be non-empty")

    det_cfg = DetectorConfig(**{"n_classes": data.n_classes, "n_anchors": len(data.anchors),
                                "n_grids": data.grid.n_grids, **cfg.detector})
    if det_cfg.n_classes != data.n_classes or det_cfg.n_anchors != len(data.anchors):
        raise ConfigError("detector config disagrees with the prepared dataset's classes/anchors")
    model = Detector(det_cfg, seed=cfg.seed)
    opt_cfg = cfg.optimizer
    if opt_cfg.get("method", "adam") != "adam":
        raise ConfigError(f"unsupported optimizer {opt_cfg.get('method')!r}")
    lr = float(opt_cfg.get("lr", 1e-3))
    batch_size = int(opt_cfg.get("batch_size", 32))
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    weights = LossWeights(**cfg.loss)

    log = TrainLog()
    best_path = out / "best.ckpt"
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = train_idx[rng.permutation(len(train_idx))]
        shifts = rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=len(order))
        sums = dict.fromkeys(("total", "coord", "obj", "noobj", "cls"), 0.0)
        for b, start in enumerate(range(0, len(order), batch_size)):
            idx = order[start:start + batch_size]
            x = np.asarray(data.cqt[idx])
            if cfg.augment:
                x = np.stack([pitch_shift_bins(xi, int(k)) for xi, k in zip(x, shifts[start:start + batch_size])])
            pred = model(torch.from_numpy(x))
            parts = detection_loss(pred, data.targets[idx], data.ignore[idx], weights)
            loss = parts.total / len(idx)
            if not torch.isfinite(loss):
                dump = out / f"diverged_epoch{epoch}_batch{b}.json"
                dump.write_text(json.dumps({"epoch": epoch, "batch": b, "clips": idx.tolist(),
                                            "shifts": shifts[start:start + batch_size].tolist(),
                                            "loss": parts.as_floats()}, indent=2))
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}; see {dump}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            for k in sums:
                sums[k] += getattr(parts, k).item()
        model._last_output = None
        val = validation_map50(model, data, val_idx, cfg.val_nms_iou, cfg.val_min_score)
        row = {k: v / len(order) for k, v in sums.items()}
        row.update(epoch=epoch, val_map50=val, lr=lr, wall_time=round(time.perf_counter() - t0, 3))
        log.rows.append(row)
        logger.info("epoch %d  loss %.4f  val mAP50 %.4f  (%.1fs)", epoch, row["total"], val, row["wall_time"])
        if val > log.best_val_map50:
            log.best_val_map50, log.best_epoch, stale = val, epoch, 0
            save_checkpoint(best_path, model, data.anchors.widths, data.class_names,
                            {"epoch": epoch, "val_map50": val, "seed": cfg.seed})
        else:
            stale += 1
            if stale >= cfg.patience:
                log.stopped_early = epoch < cfg.max_epochs
                break
    log.write_csv(out / "train_log.csv")
    return best_path, log
