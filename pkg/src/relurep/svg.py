"""Minimal deterministic SVG charts (lines and scatter points).

Output depends only on the inputs: coordinates are printed with a fixed
number of digits and no timestamps or random ids are written.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
)

WIDTH, HEIGHT = 640, 400
PAD_LEFT, PAD_RIGHT, PAD_TOP, PAD_BOTTOM = 60, 150, 30, 40
MARGIN = 0.05


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    style: str = "line"  # or "points"
    color: str | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have the same length")
        if self.style not in ("line", "points"):
            raise ValueError(f"unknown series style {self.style!r}")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _bounds(series: list[Series]) -> tuple[float, float, float, float]:
    xs = [s.x[np.isfinite(s.x) & np.isfinite(s.y)] for s in series]
    ys = [s.y[np.isfinite(s.x) & np.isfinite(s.y)] for s in series]
    xs = np.concatenate(xs) if xs else np.empty(0)
    ys = np.concatenate(ys) if ys else np.empty(0)
    if xs.size == 0:
        return 0.0, 1.0, 0.0, 1.0
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    dx, dy = (x1 - x0) * MARGIN, (y1 - y0) * MARGIN
    return float(x0 - dx), float(x1 + dx), float(y0 - dy), float(y1 + dy)


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    return np.linspace(lo, hi, count)


def render(series, title: str = "", xlabel: str = "x", ylabel: str = "y") -> str:
    """Return an SVG document for ``series``.

    An empty list of series, or series with no finite points, still gives a
    valid document with axes over the unit square.
    """
    series = list(series)
    x0, x1, y0, y1 = _bounds(series)
    pw = WIDTH - PAD_LEFT - PAD_RIGHT
    ph = HEIGHT - PAD_TOP - PAD_BOTTOM

    def px(x):
        return PAD_LEFT + (x - x0) / (x1 - x0) * pw

    def py(y):
        return PAD_TOP + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{PAD_LEFT}" y="{PAD_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        X = _fmt(px(t))
        out.append(f'<line x1="{X}" y1="{PAD_TOP + ph}" x2="{X}" y2="{PAD_TOP + ph + 4}" stroke="black"/>')
        out.append(
            f'<text x="{X}" y="{PAD_TOP + ph + 16}" text-anchor="middle" font-size="10">{t:.3g}</text>'
        )
    for t in _ticks(y0, y1):
        Y = _fmt(py(t))
        out.append(f'<line x1="{PAD_LEFT - 4}" y1="{Y}" x2="{PAD_LEFT}" y2="{Y}" stroke="black"/>')
        out.append(
            f'<text x="{PAD_LEFT - 6}" y="{Y}" text-anchor="end" dominant-baseline="middle" '
            f'font-size="10">{t:.3g}</text>'
        )
    out.append(
        f'<text x="{PAD_LEFT + pw / 2:.0f}" y="{HEIGHT - 6}" text-anchor="middle" '
        f'font-size="12">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="14" y="{PAD_TOP + ph / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {PAD_TOP + ph / 2:.0f})">{escape(ylabel)}</text>'
    )

    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        ok = np.isfinite(s.x) & np.isfinite(s.y)
        if s.style == "line":
            order = np.argsort(s.x[ok], kind="stable")
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(s.x[ok][order], s.y[ok][order]))
            if pts:
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        else:
            for a, b in zip(s.x[ok], s.y[ok]):
                out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="2.5" fill="{color}"/>')
        if s.label:
            ly = PAD_TOP + 12 + 16 * i
            lx = PAD_LEFT + pw + 10
            out.append(f'<rect x="{lx}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
            out.append(f'<text x="{lx + 14}" y="{ly + 1}" font-size="11">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, series, **kwargs) -> Path:
    path = Path(path)
    path.write_text(render(series, **kwargs))
    return path


def emit_svg(series, path, **kwargs) -> Path:
    """Write ``series`` to ``path`` as a standalone SVG file."""
    return write_svg(path, series, **kwargs)
