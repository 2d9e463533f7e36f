"""Deterministic SVG rendering for layouts, segment sets, and trajectories,
plus a minimal fixed-resolution rasterizer feeding the feature-distance proxy.

SVG output is plain text with fixed number formatting, so identical inputs
produce byte-identical documents.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import DatasetConfig, Layout, detokenize_layout, detokenize_segments
from .data import atomic_write_text

# deterministic palette, indexed by (category - 1) mod len
PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)


@dataclass(frozen=True)
class RenderStyle:
    stroke_width: float = 1.0
    opacity: float = 0.6
    canvas: int = 256  # canvas size for segment sets (unit-square coordinates)

    def fill(self, category: int) -> str:
        return PALETTE[(category - 1) % len(PALETTE)]


def _fmt(v: float) -> str:
    return f"{v:.4f}".rstrip("0").rstrip(".")


def render_svg(item, style: RenderStyle = RenderStyle()) -> str:
    """Render a Layout or a sequence of Segments as an SVG 1.1 document."""
    if isinstance(item, Layout):
        return _render_layout(item, style)
    return _render_segments(item, style)


def _svg_open(w, h):
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_fmt(w)}" height="{_fmt(h)}" viewBox="0 0 {_fmt(w)} {_fmt(h)}">\n'
        f'<rect x="0" y="0" width="{_fmt(w)}" height="{_fmt(h)}" fill="#ffffff"/>\n'
    )


def _render_layout(layout: Layout, style: RenderStyle) -> str:
    # scene origin is bottom-left; SVG's is top-left, so flip y
    parts = [_svg_open(layout.W, layout.H)]
    for b in layout.boxes:
        y_svg = layout.H - (b.y + b.h)
        parts.append(
            f'<rect x="{_fmt(b.x)}" y="{_fmt(y_svg)}" width="{_fmt(b.w)}" '
            f'height="{_fmt(b.h)}" fill="{style.fill(b.c)}" '
            f'fill-opacity="{_fmt(style.opacity)}" stroke="{style.fill(b.c)}" '
            f'stroke-width="{_fmt(style.stroke_width)}"/>\n'
        )
    parts.append("</svg>\n")
    return "".join(parts)


def _render_segments(segments, style: RenderStyle) -> str:
    s = float(style.canvas)
    parts = [_svg_open(s, s)]
    for seg in segments:
        parts.append(
            f'<line x1="{_fmt(seg.x1 * s)}" y1="{_fmt((1.0 - seg.y1) * s)}" '
            f'x2="{_fmt(seg.x2 * s)}" y2="{_fmt((1.0 - seg.y2) * s)}" '
            f'stroke="#222222" stroke-width="{_fmt(style.stroke_width)}"/>\n'
        )
    parts.append("</svg>\n")
    return "".join(parts)


def render_trajectory(trajectory, data_cfg: DatasetConfig, outdir: str,
                      style: RenderStyle = RenderStyle(), total_steps=None) -> list:
    """Write one SVG per snapshot, named by diffusion steps completed.

    Filenames zero-pad the step count so lexicographic order equals step
    order. Returns the written paths.
    """
    if not trajectory.snapshots:
        raise ValueError("trajectory is empty")
    os.makedirs(outdir, exist_ok=True)
    if total_steps is None:
        total_steps = trajectory.snapshots[0][0] + 1
    width = max(4, len(str(total_steps)))
    paths = []
    for t, matrix in trajectory.snapshots:
        steps_done = total_steps - 1 - t
        if data_cfg.mode == "segment":
            item = detokenize_segments(matrix, data_cfg)
        else:
            item = detokenize_layout(matrix, data_cfg)
        path = os.path.join(outdir, f"step_{steps_done:0{width}d}.svg")
        atomic_write_text(path, render_svg(item, style))
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# minimal rasterizer (fixed 256x256, for the feature-distance proxy)

_HEX = {c: tuple(int(c[i : i + 2], 16) / 255.0 for i in (1, 3, 5)) for c in PALETTE}


def rasterize(item, size: int = 256, style: RenderStyle = RenderStyle()) -> np.ndarray:
    """Rasterize a Layout or segment sequence to a (size, size, 3) float image
    in [0, 1], white background, row 0 at the top (matching the SVG)."""
    img = np.ones((size, size, 3))
    if isinstance(item, Layout):
        for b in item.boxes:
            x0 = int(np.clip(round(b.x / item.W * size), 0, size))
            x1 = int(np.clip(round((b.x + b.w) / item.W * size), 0, size))
            y1 = int(np.clip(round((1.0 - b.y / item.H) * size), 0, size))
            y0 = int(np.clip(round((1.0 - (b.y + b.h) / item.H) * size), 0, size))
            color = np.array(_HEX[style.fill(b.c)])
            a = style.opacity
            img[y0:y1, x0:x1] = (1 - a) * img[y0:y1, x0:x1] + a * color
    else:
        for seg in item:
            n = 2 * size
            xs = np.linspace(seg.x1, seg.x2, n)
            ys = np.linspace(seg.y1, seg.y2, n)
            px = np.clip((xs * size).astype(int), 0, size - 1)
            py = np.clip(((1.0 - ys) * size).astype(int), 0, size - 1)
            img[py, px] = 0.13
    return img
