"""SVG rendering of a clip: CQT heatmap, ground-truth underlays and score-scaled boxes."""

from __future__ import annotations

import base64
import io
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image

from .audio import CqtMatrix

WIDTH = 960
HEATMAP_H = 252  # 3 px per CQT bin
PANEL_H = 120  # reference height of a score-1.0 detection box
MARGIN = 24
PALETTE = ("#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6",
           "#bfef45", "#469990", "#9a6324", "#800000", "#808000", "#000075")


def _heatmap_png(values: np.ndarray) -> str:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    # low bins at the bottom, as on a piano roll
    img = Image.fromarray(np.round(255 * (1.0 - scaled[::-1])).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def emit_plot(cqt: CqtMatrix | np.ndarray, dets: Sequence, gts: Sequence, out, clip_len: float = 15.0,
              class_names: Sequence[str] | None = None, title: str = "") -> None:
    """Write an SVG figure. Detection box height = score * PANEL_H, anchored at the panel baseline.

    ``dets`` and ``gts`` carry clip-relative ``interval`` and ``class_id`` (and ``score`` for dets).
    """
    values = cqt.values if isinstance(cqt, CqtMatrix) else np.asarray(cqt)
    sx = WIDTH / clip_len
    top = MARGIN + (14 if title else 0)
    panel_top = top + HEATMAP_H + MARGIN
    base = panel_top + PANEL_H
    total_h = base + MARGIN
    label = (lambda c: class_names[c]) if class_names else str

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH + 2 * MARGIN}" height="{total_h}" '
        f'viewBox="0 0 {WIDTH + 2 * MARGIN} {total_h}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{MARGIN}" y="{MARGIN}" font-size="12" font-family="sans-serif">{escape(title)}</text>')
    parts.append(f'<image id="cqt" x="{MARGIN}" y="{top}" width="{WIDTH}" height="{HEATMAP_H}" '
                 f'preserveAspectRatio="none" href="data:image/png;base64,{_heatmap_png(values)}"/>')
    parts.append(f'<rect id="panel" x="{MARGIN}" y="{panel_top}" width="{WIDTH}" height="{PANEL_H}" '
                 'fill="none" stroke="#999"/>')
    for g in sorted(gts, key=lambda g: (g.interval.start, g.class_id)):
        x0 = MARGIN + max(g.interval.start, 0.0) * sx
        w = (min(g.interval.end, clip_len) - max(g.interval.start, 0.0)) * sx
        color = PALETTE[g.class_id % len(PALETTE)]
        for y, h in ((top, HEATMAP_H), (panel_top, PANEL_H)):
            parts.append(f'<rect class="gt" data-class="{escape(label(g.class_id))}" x="{_fmt(x0)}" y="{y}" '
                         f'width="{_fmt(w)}" height="{h}" fill="{color}" fill-opacity="0.15"/>')
    for d in sorted(dets, key=lambda d: (-d.score, d.interval.start, d.class_id)):
        x0 = MARGIN + max(d.interval.start, 0.0) * sx
        w = (min(d.interval.end, clip_len) - max(d.interval.start, 0.0)) * sx
        h = d.score * PANEL_H
        color = PALETTE[d.class_id % len(PALETTE)]
        parts.append(f'<rect class="det" data-class="{escape(label(d.class_id))}" data-score="{d.score:.4f}" '
                     f'x="{_fmt(x0)}" y="{_fmt(base - h)}" width="{_fmt(w)}" height="{_fmt(h)}" '
                     f'fill="none" stroke="{color}" stroke-width="2"/>')
    for s in range(int(clip_len) + 1):
        x = MARGIN + s * sx
        parts.append(f'<text x="{_fmt(x)}" y="{base + 14}" font-size="9" text-anchor="middle" '
                     f'font-family="sans-serif">{s}</text>')
    parts.append("</svg>")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
