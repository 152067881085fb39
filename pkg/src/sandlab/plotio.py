"""Plot-data emission: two-column text files and a minimal SVG renderer.

Data files are the primary product (consumable by any plotting tool); the
SVG is a dependency-free quick-look rendering with log-log axes.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DataError

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")

_W, _H = 720, 540
_ML, _MR, _MT, _MB = 70, 20, 40, 55


def write_plot_data(path, x, y):
    """Two-column text file (log10 abscissa, log10 density)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0:
        raise DataError("empty curve")
    with open(path, "w") as fh:
        for a, b in zip(x.tolist(), y.tolist()):
            fh.write(f"{a!r} {b!r}\n")


def _ticks(lo: float, hi: float) -> list[int]:
    return list(range(math.ceil(lo), math.floor(hi) + 1))


def render_svg(path, curves: Sequence[tuple[str, np.ndarray, np.ndarray]],
               title: str = "", xlabel: str = "log10 S",
               ylabel: str = "log10 P(S)"):
    """Log-log line plot of (label, log10 x, log10 y) curves."""
    curves = [(lab, np.asarray(x, float), np.asarray(y, float))
              for lab, x, y in curves if len(x)]
    if not curves:
        raise DataError("no non-empty curves to render")
    xlo = min(float(x.min()) for _, x, _ in curves)
    xhi = max(float(x.max()) for _, x, _ in curves)
    ylo = min(float(y.min()) for _, _, y in curves)
    yhi = max(float(y.max()) for _, _, y in curves)
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    padx = 0.03 * (xhi - xlo)
    pady = 0.03 * (yhi - ylo)
    xlo -= padx
    xhi += padx
    ylo -= pady
    yhi += pady

    def px(v):
        return _ML + (v - xlo) / (xhi - xlo) * (_W - _ML - _MR)

    def py(v):
        return _H - _MB - (v - ylo) / (yhi - ylo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
        f'height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
        f'height="{_H - _MT - _MB}" fill="none" stroke="black"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" '
            f'font-size="16">{title}</text>')
    for t in _ticks(xlo, xhi):
        x = px(t)
        parts.append(f'<line x1="{x:.2f}" y1="{_H - _MB}" x2="{x:.2f}" '
                     f'y2="{_H - _MB + 6}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{_H - _MB + 20}" '
                     f'text-anchor="middle" font-size="12">{t}</text>')
    for t in _ticks(ylo, yhi):
        y = py(t)
        parts.append(f'<line x1="{_ML - 6}" y1="{y:.2f}" x2="{_ML}" '
                     f'y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 10}" y="{y + 4:.2f}" '
                     f'text-anchor="end" font-size="12">{t}</text>')
    parts.append(f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="{_H - 12}" '
                 f'text-anchor="middle" font-size="14">{xlabel}</text>')
    parts.append(f'<text x="18" y="{(_MT + _H - _MB) / 2:.1f}" '
                 f'text-anchor="middle" font-size="14" '
                 f'transform="rotate(-90 18 {(_MT + _H - _MB) / 2:.1f})">'
                 f'{ylabel}</text>')
    for i, (label, x, y) in enumerate(curves):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}"
                       for a, b in zip(x.tolist(), y.tolist()))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 18 + 18 * i
        lx = _W - _MR - 150
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 30}" y="{ly}" font-size="12">'
                     f'{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
