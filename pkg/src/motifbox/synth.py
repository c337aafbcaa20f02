"""Synthetic motif corpus: harmonic-tone motif renderings over pink noise.

Every synthetic clip is its own 15 s "act" so the regular windowing and split
machinery applies unchanged. Recording ids play the role of performance
versions; splits.json assigns whole versions to train/val/test.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .audio import CLIP_SAMPLES, SAMPLE_RATE, cqt, write_cqt, write_wav
from .dataset import MotifInstance, SplitConfig, write_annotations
from .errors import ConfigError
from .geometry import Interval

DEFAULT_PROTOTYPES = (
    # (semitones above the root, duration in beats)
    ((0, 1.0), (4, 1.0), (7, 1.0), (12, 2.0)),
    ((7, 1.5), (5, 0.5), (3, 1.0), (2, 1.0), (0, 2.0)),
    ((0, 0.5), (0, 0.5), (0, 0.5), (5, 1.5), (3, 1.0)),
)


@dataclass
class SynthConfig:
    prototypes: list = field(default_factory=lambda: [list(map(list, p)) for p in DEFAULT_PROTOTYPES])
    class_names: list = field(default_factory=lambda: ["M0", "M1", "M2"])
    train_versions: int = 10
    val_versions: int = 2
    test_versions: int = 1
    clips_per_version: int = 200
    max_instances: int = 3
    bpm: float = 120.0
    tempo_range: tuple = (0.8, 1.25)
    transpose_range: int = 3
    root_midi: int = 55
    distractors: tuple = (3, 8)
    distractor_midi: tuple = (40, 84)
    noise_floor: float = 0.02
    margin_sec: float = 0.25

    def __post_init__(self):
        if len(self.class_names) != len(self.prototypes):
            raise ConfigError("class_names and prototypes differ in length")
        if not 0 <= self.max_instances <= 3:
            raise ConfigError("max_instances must be in [0, 3]")
        longest = max(self.prototype_seconds(i, self.tempo_range[0]) for i in range(len(self.prototypes)))
        if longest > 15.0:
            raise ConfigError(f"prototype lasts {longest:.2f}s at the slowest tempo (> 15s)")

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        raw = dict(raw)
        for key in ("tempo_range", "distractors", "distractor_midi"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("tempo_range", "distractors", "distractor_midi"):
            d[key] = list(d[key])
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def prototype_seconds(self, idx: int, tempo: float = 1.0) -> float:
        beats = sum(d for _, d in self.prototypes[idx])
        return beats * 60.0 / self.bpm / tempo

    def split_config(self, mode: str = "version") -> SplitConfig:
        """Version split as generated, or an act split in the same train/val/test proportions."""
        a, b = self.train_versions, self.train_versions + self.val_versions
        if mode == "version":
            names = version_names(self)
            return SplitConfig("version", names[:a], names[a:b], names[b:])
        if mode != "act":
            raise ConfigError(f"unknown split mode {mode!r}")
        acts = [f"c{i:04d}" for i in range(self.clips_per_version)]
        total = b + self.test_versions
        i, j = round(len(acts) * a / total), round(len(acts) * b / total)
        if not 0 < i < j < len(acts):
            raise ConfigError("too few clips per version for an act split")
        return SplitConfig("act", acts[:i], acts[i:j], acts[j:])


@dataclass
class SynthClip:
    recording_id: str
    act_id: str
    samples: np.ndarray
    instances: list[MotifInstance]


def version_names(cfg: SynthConfig) -> list[str]:
    n = cfg.train_versions + cfg.val_versions + cfg.test_versions
    return [f"v{i:02d}" for i in range(n)]


def midi_hz(m: float) -> float:
    return 440.0 * 2.0 ** ((m - 69.0) / 12.0)


def harmonic_tone(freq: float, duration: float, amp: float = 1.0, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Fundamental plus three decaying partials under an attack/decay/release envelope."""
    n = max(int(round(duration * sr)), 1)
    t = np.arange(n) / sr
    tone = np.zeros(n)
    for h, a in ((1, 1.0), (2, 0.5), (3, 0.3), (4, 0.2)):
        if h * freq < sr / 2:
            tone += a * np.sin(2 * np.pi * h * freq * t)
    env = np.exp(-1.5 * t)
    attack = min(n, int(0.01 * sr))
    release = min(n, int(0.03 * sr))
    env[:attack] *= np.linspace(0.0, 1.0, attack, endpoint=False)
    if release:
        env[n - release:] *= np.linspace(1.0, 0.0, release)
    return amp * tone * env / 2.0


def render_motif(notes, root_midi: float, seconds_per_beat: float) -> np.ndarray:
    parts = [harmonic_tone(midi_hz(root_midi + semi), beats * seconds_per_beat) for semi, beats in notes]
    return np.concatenate(parts)


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec))
    f[0] = 1
    noise = np.fft.irfft(spec / np.sqrt(f), n)
    return noise / np.sqrt(np.mean(noise ** 2))


def _place(durations: list[float], clip_len: float, margin: float, rng: np.random.Generator) -> list[float]:
    """Random non-overlapping start times for motifs of the given durations."""
    free = clip_len - 2 * margin - sum(durations)
    cuts = np.sort(rng.uniform(0.0, free, size=len(durations)))
    gaps = np.diff(np.concatenate([[0.0], cuts]))
    starts, t = [], margin
    for gap, dur in zip(gaps, durations):
        t += gap
        starts.append(t)
        t += dur
    return starts


def generate_clip(cfg: SynthConfig, seed: int, version: int, index: int, class_cursor: int):
    """Render one clip. Returns (samples, [(class_id, start, end)], next class cursor)."""
    rng = np.random.default_rng([seed, version, index])
    n = CLIP_SAMPLES
    clip_len = n / SAMPLE_RATE
    K = len(cfg.prototypes)
    mix = cfg.noise_floor * pink_noise(n, rng)

    lo, hi = cfg.distractors
    for _ in range(int(rng.integers(lo, hi + 1)) if hi > 0 else 0):
        dur = rng.uniform(0.15, 0.8)
        start = rng.uniform(0.0, clip_len - dur)
        midi = rng.integers(cfg.distractor_midi[0], cfg.distractor_midi[1] + 1)
        tone = harmonic_tone(midi_hz(midi), dur, amp=rng.uniform(0.3, 0.8))
        s = int(round(start * SAMPLE_RATE))
        mix[s:s + len(tone)] += tone[: n - s]

    count = int(rng.integers(0, cfg.max_instances + 1))
    classes, renders = [], []
    for _ in range(count):
        cls = class_cursor % K
        class_cursor += 1
        tempo = rng.uniform(*cfg.tempo_range)
        shift = int(rng.integers(-cfg.transpose_range, cfg.transpose_range + 1))
        audio = render_motif(cfg.prototypes[cls], cfg.root_midi + shift, 60.0 / cfg.bpm / tempo)
        classes.append(cls)
        renders.append(audio)
    while renders and sum(len(r) for r in renders) / SAMPLE_RATE > clip_len - 2 * cfg.margin_sec:
        renders.pop()
        classes.pop()
        class_cursor -= 1
    starts = _place([len(r) / SAMPLE_RATE for r in renders], clip_len, cfg.margin_sec, rng)
    events = []
    for cls, audio, start in zip(classes, renders, starts):
        s = int(round(start * SAMPLE_RATE))
        mix[s:s + len(audio)] += audio
        events.append((cls, s / SAMPLE_RATE, (s + len(audio)) / SAMPLE_RATE))

    peak = np.abs(mix).max()
    if peak > 0.9:
        mix *= 0.9 / peak
    return mix, events, class_cursor


def synth_generate(cfg: SynthConfig, seed: int) -> Iterator[SynthClip]:
    """Yield every clip of the corpus in a fixed order; deterministic given seed."""
    for v, rec in enumerate(version_names(cfg)):
        cursor = v  # staggered start keeps classes balanced across versions
        for i in range(cfg.clips_per_version):
            samples, events, cursor = generate_clip(cfg, seed, v, i, cursor)
            act = f"c{i:04d}"
            insts = [MotifInstance(rec, act, cls, Interval(s, e)) for cls, s, e in events]
            yield SynthClip(rec, act, samples, insts)


def write_corpus(out_dir, cfg: SynthConfig, seed: int, wav: bool = False, split_mode: str = "version") -> dict:
    """Write CQT caches (and optionally WAVs), annotations, acts, splits and manifest."""
    out = Path(out_dir)
    (out / "cqt").mkdir(parents=True, exist_ok=True)
    instances = []
    acts = []
    for clip in synth_generate(cfg, seed):
        stem = Path(clip.recording_id) / f"{clip.act_id}"
        (out / "cqt" / clip.recording_id).mkdir(exist_ok=True)
        write_cqt(out / "cqt" / f"{stem}.cqt", cqt(clip.samples).values)
        if wav:
            (out / "wav" / clip.recording_id).mkdir(parents=True, exist_ok=True)
            write_wav(out / "wav" / f"{stem}.wav", clip.samples)
        instances.extend(clip.instances)
        acts.append((clip.recording_id, clip.act_id, len(clip.samples) / SAMPLE_RATE))
    write_annotations(out / "annotations.csv", instances, cfg.class_names)
    with open(out / "acts.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "act_id", "duration_sec"])
        writer.writerows([rec, act, repr(dur)] for rec, act, dur in acts)
    cfg.split_config(split_mode).save(out / "splits.json")
    manifest = {
        "seed": seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "class_names": list(cfg.class_names),
        "n_clips": len(acts),
        "n_instances": len(instances),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
