"""Convolutional boundary detector, frame-wise baseline, and checkpoint I/O.

Both networks share a backbone of 3x3 conv blocks (per-channel normalization,
leaky ReLU). The detector max-pools time and frequency, then average-pools to
1 x n_grids cells; the baseline pools frequency only and keeps every frame.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import torch
import torch.nn as nn

from .audio import CLIP_FRAMES
from .errors import CompatibilityError, FormatError, ShapeError, StateError

WEIGHTS_MARKER = b"%%WEIGHTS%%"
CHECKPOINT_VERSION = 1


@dataclass
class DetectorConfig:
    n_anchors: int = 3
    n_grids: int = 11
    n_classes: int = 13
    channels: tuple = (32, 64, 128, 256, 256)
    depths: tuple = (1, 1, 1, 2, 2)
    kernel_size: int = 3
    n_bins: int = 84
    n_frames: int = CLIP_FRAMES
    leaky_slope: float = 0.1
    objectness_prior: float = -4.0
    class_activation: str = "sigmoid"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.depths = tuple(int(d) for d in self.depths)
        if len(self.channels) != len(self.depths):
            raise ValueError("channels and depths must have equal length")

    @property
    def head_channels(self) -> int:
        return self.n_anchors * (3 + self.n_classes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["depths"] = list(self.depths)
        return d

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DetectorConfig":
        return cls(**raw)


def _backbone(cfg: DetectorConfig, pool_time: bool) -> nn.Sequential:
    layers = []
    c_in = 1
    last = len(cfg.channels) - 1
    for b, (c_out, depth) in enumerate(zip(cfg.channels, cfg.depths)):
        for _ in range(depth):
            layers += [
                nn.Conv2d(c_in, c_out, cfg.kernel_size, padding=cfg.kernel_size // 2, bias=False),  # GroupNorm cancels a bias
                nn.GroupNorm(c_out, c_out),  # per-channel, per-example
                nn.LeakyReLU(cfg.leaky_slope),
            ]
            c_in = c_out
        if b < min(4, last + 1) and b != last:
            layers.append(nn.MaxPool2d((2, 2) if pool_time else (2, 1)))
    return nn.Sequential(*layers)


def init_params(module: nn.Module, seed: int, slope: float) -> None:
    gen = torch.Generator().manual_seed(int(seed))
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_uniform_(m.weight, a=slope, mode="fan_in", nonlinearity="leaky_relu", generator=gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.GroupNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class _Net(nn.Module):
    def __init__(self):
        super().__init__()
        self._last_output: torch.Tensor | None = None

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x[None, None]
        elif x.dim() == 3:
            x = x[:, None]
        if x.dim() != 4 or x.shape[1] != 1 or tuple(x.shape[-2:]) != (self.cfg.n_bins, self.cfg.n_frames):
            raise ShapeError(f"expected input (..., {self.cfg.n_bins}, {self.cfg.n_frames}), got {tuple(x.shape)}")
        return x

    def param_store(self) -> "OrderedDict[str, torch.Tensor]":
        return OrderedDict(self.named_parameters())

    def backward(self, grad_output: torch.Tensor) -> "OrderedDict[str, torch.Tensor]":
        """Back-propagate ``grad_output`` through the last recorded forward pass."""
        out = self._last_output
        if out is None or not out.requires_grad:
            raise StateError("backward() called without a recorded forward pass")
        self._last_output = None
        self.zero_grad(set_to_none=False)
        for p in self.parameters():
            if p.grad is None:
                p.grad = torch.zeros_like(p)
        out.backward(grad_output.to(out.dtype))
        return OrderedDict((n, p.grad) for n, p in self.named_parameters())


class Detector(_Net):
    """CQT (B, 84, 646) -> raw predictions (B, n_anchors, n_grids, 3 + C)."""

    def __init__(self, cfg: DetectorConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg or DetectorConfig()
        self.backbone = _backbone(self.cfg, pool_time=True)
        self.pool = nn.AdaptiveAvgPool2d((1, self.cfg.n_grids))
        self.head = nn.Conv2d(self.cfg.channels[-1], self.cfg.head_channels, 1)
        init_params(self, seed, self.cfg.leaky_slope)
        with torch.no_grad():
            bias = self.head.bias.view(self.cfg.n_anchors, 3 + self.cfg.n_classes)
            bias[:, 0] = self.cfg.objectness_prior

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self._check_input(x)
        h = self.head(self.pool(self.backbone(x)))  # (B, n*(3+C), 1, G)
        B = h.shape[0]
        out = h.view(B, self.cfg.n_anchors, 3 + self.cfg.n_classes, self.cfg.n_grids).permute(0, 1, 3, 2)
        self._last_output = out
        return out


class BaselineNet(_Net):
    """CQT (B, 84, 646) -> frame-wise class logits (B, C, 646)."""

    def __init__(self, cfg: DetectorConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg or DetectorConfig()
        self.backbone = _backbone(self.cfg, pool_time=False)
        self.head = nn.Conv1d(self.cfg.channels[-1], self.cfg.n_classes, 1)
        init_params(self, seed, self.cfg.leaky_slope)
        nn.init.zeros_(self.head.bias)
        bound = 1.0 / np.sqrt(self.cfg.channels[-1])
        with torch.no_grad():
            self.head.weight.uniform_(-bound, bound, generator=torch.Generator().manual_seed(int(seed) + 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self._check_input(x)
        h = self.backbone(x).mean(dim=2)  # pool frequency to 1
        out = self.head(h)
        self._last_output = out
        return out


def forward_detector(cqt, model: Detector) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(getattr(cqt, "values", cqt)), dtype=next(model.parameters()).dtype)
    return model(x)


def forward_baseline(cqt, model: BaselineNet) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(getattr(cqt, "values", cqt)), dtype=next(model.parameters()).dtype)
    return model(x)


def count_params(params) -> int:
    if isinstance(params, nn.Module):
        params = params.parameters()
    elif isinstance(params, Mapping):
        params = params.values()
    return int(sum(int(np.prod(tuple(p.shape))) for p in params))


# ---------------------------------------------------------------------------
# checkpoints: JSON header line, "%%WEIGHTS%%" line, float32 LE parameters


def save_checkpoint(path, model: Detector, anchors: Iterable[float], class_names: Iterable[str],
                    training: Mapping | None = None) -> None:
    header = {
        "format": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "anchors": [float(a) for a in anchors],
        "class_names": list(class_names),
        "training": dict(training or {}),
    }
    blob = b"".join(p.detach().cpu().numpy().astype("<f4").tobytes() for p in model.param_store().values())
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n" + WEIGHTS_MARKER + b"\n")
        fh.write(blob)


def load_checkpoint(path, n_classes: int | None = None, n_anchors: int | None = None):
    """Return (model, header). Raises CompatibilityError on class/anchor count mismatch."""
    raw = Path(path).read_bytes()
    marker = b"\n" + WEIGHTS_MARKER + b"\n"
    pos = raw.find(marker)
    if pos < 0:
        raise FormatError(f"{path}: weights marker not found")
    try:
        header = json.loads(raw[:pos].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header") from exc
    if header.get("format") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint format {header.get('format')}")
    cfg = DetectorConfig.from_dict(header["config"])
    if n_classes is not None and cfg.n_classes != n_classes:
        raise CompatibilityError(f"checkpoint has {cfg.n_classes} classes, expected {n_classes}")
    if n_anchors is not None and cfg.n_anchors != n_anchors:
        raise CompatibilityError(f"checkpoint has {cfg.n_anchors} anchors, expected {n_anchors}")
    if len(header["anchors"]) != cfg.n_anchors:
        raise CompatibilityError("anchor list length disagrees with the detector config")
    model = Detector(cfg)
    weights = np.frombuffer(raw, dtype="<f4", offset=pos + len(marker))
    if weights.size != count_params(model):
        raise FormatError(f"{path}: {weights.size} weights stored, model needs {count_params(model)}")
    offset = 0
    with torch.no_grad():
        for p in model.param_store().values():
            n = p.numel()
            p.copy_(torch.from_numpy(weights[offset:offset + n].astype(np.float32)).view_as(p))
            offset += n
    return model, header
