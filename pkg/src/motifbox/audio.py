"""Audio front end: WAV decoding, resampling, constant-Q transform, pitch shift.

The CQT is computed directly in the time domain: every bin owns a Hann-windowed
complex exponential whose length shrinks with frequency (constant Q). Bins are
grouped by octave so each group only pays for its own window length.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import FormatError, InsufficientInputError, RangeError, ShapeError, UnsupportedError

SAMPLE_RATE = 22050
HOP = 512
CLIP_SECONDS = 15.0
CLIP_SAMPLES = int(CLIP_SECONDS * SAMPLE_RATE)  # 330750
CLIP_FRAMES = CLIP_SAMPLES // HOP + 1  # 646
FRAME_RATE = SAMPLE_RATE / HOP

CQT_MAGIC = b"CQT1"


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    origin_sec: float = 0.0

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class CqtSpec:
    bins_per_octave: int = 12
    n_bins: int = 84
    f_min: float = 32.703195662574764  # C1
    hop: int = HOP
    window: str = "hann"
    gain: float = 10.0
    normalize: bool = True

    def __post_init__(self):
        if self.bins_per_octave != 12 or self.hop != HOP:
            raise RangeError("bins_per_octave must be 12 and hop 512")
        if self.n_bins % self.bins_per_octave:
            raise RangeError("n_bins must be a multiple of bins_per_octave")

    @property
    def q(self) -> float:
        return 1.0 / (2.0 ** (1.0 / self.bins_per_octave) - 1.0)

    def center_freqs(self) -> np.ndarray:
        return self.f_min * 2.0 ** (np.arange(self.n_bins) / self.bins_per_octave)

    def window_lengths(self, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
        return np.ceil(self.q * sample_rate / self.center_freqs()).astype(int)


@dataclass
class CqtMatrix:
    values: np.ndarray  # (n_bins, frames)
    frame_rate: float = FRAME_RATE

    @property
    def shape(self):
        return self.values.shape


# ---------------------------------------------------------------------------
# WAV input


def load_wav(path, target_rate: int = SAMPLE_RATE) -> AudioClip:
    try:
        rate, data = wavfile.read(path)
    except (ValueError, struct.error, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedError(f"{path}: sample type {data.dtype} (need PCM16 or float32)")
    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise UnsupportedError(f"{path}: {samples.shape[1]} channels (need 1 or 2)")
        samples = samples.mean(axis=1)
    samples = resample(samples, rate, target_rate)
    return AudioClip(np.clip(samples, -1.0, 1.0), target_rate)


def resample(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return np.asarray(samples, dtype=np.float64)
    g = gcd(int(src_rate), int(dst_rate))
    up, down = dst_rate // g, src_rate // g
    out = resample_poly(samples, up, down, window=("kaiser", 5.0))
    n_out = int(math.ceil(len(samples) * up / down))
    return out[:n_out]


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    wavfile.write(path, sample_rate, np.asarray(samples, dtype=np.float32))


# ---------------------------------------------------------------------------
# CQT


@lru_cache(maxsize=8)
def _octave_kernels(spec: CqtSpec, sample_rate: int):
    """Per-octave (bin indices, window length, real kernel matrix L x 2b)."""
    freqs = spec.center_freqs()
    lengths = spec.window_lengths(sample_rate)
    groups = []
    for lo in range(0, spec.n_bins, spec.bins_per_octave):
        bins = np.arange(lo, lo + spec.bins_per_octave)
        L = int(lengths[lo]) | 1  # odd so the frame has a true center sample
        kern = np.zeros((L, 2 * len(bins)))
        for j, k in enumerate(bins):
            n_k = int(lengths[k])
            win = np.hanning(n_k + 2)[1:-1]
            t = (np.arange(n_k) - (n_k - 1) / 2) / sample_rate
            off = (L - n_k) // 2
            kern[off:off + n_k, j] = win * np.cos(2 * np.pi * freqs[k] * t) / win.sum()
            kern[off:off + n_k, len(bins) + j] = -win * np.sin(2 * np.pi * freqs[k] * t) / win.sum()
        groups.append((bins, L, kern))
    return groups


def cqt_magnitude(samples: np.ndarray, spec: CqtSpec = CqtSpec(), sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Uncompressed |X| of shape (n_bins, len // hop + 1), frames centered on t * hop."""
    x = np.asarray(samples, dtype=np.float64)
    longest = int(spec.window_lengths(sample_rate)[0])
    if len(x) < longest:
        raise InsufficientInputError(
            f"clip of {len(x)} samples is shorter than the lowest-bin window ({longest})")
    n_frames = len(x) // spec.hop + 1
    groups = _octave_kernels(spec, sample_rate)
    pad = max(L for _, L, _ in groups) // 2 + 1
    padded = np.pad(x, pad)
    out = np.empty((spec.n_bins, n_frames))
    centers = np.arange(n_frames) * spec.hop + pad
    for bins, L, kern in groups:
        frames = np.lib.stride_tricks.sliding_window_view(padded, L)[centers - L // 2]
        proj = frames @ kern
        nb = len(bins)
        out[bins] = np.hypot(proj[:, :nb], proj[:, nb:]).T
    return out


def cqt(clip: AudioClip | np.ndarray, spec: CqtSpec = CqtSpec()) -> CqtMatrix:
    if isinstance(clip, AudioClip):
        if clip.sample_rate != SAMPLE_RATE:
            raise RangeError(f"clip sample rate {clip.sample_rate} != {SAMPLE_RATE}")
        samples = clip.samples
    else:
        samples = clip
    mag = cqt_magnitude(samples, spec, SAMPLE_RATE)
    values = np.log1p(spec.gain * mag)
    if spec.normalize:
        peak = values.max()
        if peak > 0:
            values = values / peak
    return CqtMatrix(values, SAMPLE_RATE / spec.hop)


def pitch_shift_bins(m, k: int):
    """Roll CQT rows by ``k`` semitone bins, zero-filling the vacated rows.

    Works on a ``CqtMatrix`` or any array whose second-to-last axis is frequency.
    """
    if int(k) != k or abs(k) > 3:
        raise RangeError(f"pitch shift {k} outside [-3, 3]")
    k = int(k)
    values = m.values if isinstance(m, CqtMatrix) else np.asarray(m)
    out = np.zeros_like(values)
    if k == 0:
        out[...] = values
    elif k > 0:
        out[..., k:, :] = values[..., :-k, :]
    else:
        out[..., :k, :] = values[..., -k:, :]
    return CqtMatrix(out, m.frame_rate) if isinstance(m, CqtMatrix) else out


# ---------------------------------------------------------------------------
# CQT cache files: "CQT1", u32 F, u32 T, u32 reserved, then F*T float32 LE


def write_cqt(path, values: np.ndarray) -> None:
    values = np.asarray(values.values if isinstance(values, CqtMatrix) else values)
    if values.ndim != 2:
        raise ShapeError(f"CQT cache needs a 2D matrix, got {values.shape}")
    F, T = values.shape
    with open(path, "wb") as fh:
        fh.write(CQT_MAGIC + struct.pack("<III", F, T, 0))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_cqt(path) -> CqtMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != CQT_MAGIC:
        raise FormatError(f"{path}: not a CQT1 file")
    F, T, _ = struct.unpack("<III", raw[4:16])
    if len(raw) != 16 + 4 * F * T:
        raise FormatError(f"{path}: expected {F}x{T} floats, file has {len(raw) - 16} payload bytes")
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(F, T).astype(np.float32)
    return CqtMatrix(values)
