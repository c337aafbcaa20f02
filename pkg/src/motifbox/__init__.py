"""Leitmotif occurrence detection as 1D boundary regression over constant-Q spectrograms."""

from .audio import CLIP_FRAMES, CqtSpec, cqt, load_wav, pitch_shift_bins
from .geometry import AnchorSet, Detection, GridSpec, Interval, decode_tensor, encode_instance, nms
from .model import BaselineNet, Detector, DetectorConfig, count_params, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CLIP_FRAMES", "CqtSpec", "cqt", "load_wav", "pitch_shift_bins",
    "AnchorSet", "Detection", "GridSpec", "Interval", "decode_tensor", "encode_instance", "nms",
    "BaselineNet", "Detector", "DetectorConfig", "count_params", "load_checkpoint", "save_checkpoint",
]
