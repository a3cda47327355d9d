"""Small deterministic SVG writer for FIC plots, risk curves and heatmaps."""
from __future__ import annotations

from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

W, H = 640, 440
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 55
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def nice_ticks(lo: float, hi: float, k: int = 5) -> np.ndarray:
    if not np.isfinite(lo) or not np.isfinite(hi):
        return np.array([])
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / k
    mag = 10 ** np.floor(np.log10(raw))
    step = mag * min((1, 2, 2.5, 5, 10), key=lambda m: abs(m * mag - raw))
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


@dataclass
class _Frame:
    xlim: tuple[float, float]
    ylim: tuple[float, float]

    def x(self, v) -> float:
        a, b = self.xlim
        return LEFT + (v - a) / (b - a) * (W - LEFT - RIGHT)

    def y(self, v) -> float:
        a, b = self.ylim
        return H - BOTTOM - (v - a) / (b - a) * (H - TOP - BOTTOM)


def _lim(vals, pad=0.05) -> tuple[float, float]:
    v = np.asarray([x for x in np.ravel(vals) if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else max(abs(hi), 1.0)
    return lo - pad * span, hi + pad * span


def _axes(fr: _Frame, xlabel: str, ylabel: str, title: str) -> list[str]:
    out = [f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" fill="none" stroke="#000"/>']
    for t in nice_ticks(*fr.xlim):
        if fr.xlim[0] <= t <= fr.xlim[1]:
            px = fr.x(t)
            out.append(f'<line x1="{px:.2f}" y1="{H - BOTTOM}" x2="{px:.2f}" y2="{H - BOTTOM + 5}" stroke="#000"/>')
            out.append(f'<text x="{px:.2f}" y="{H - BOTTOM + 18}" font-size="11" text-anchor="middle">{t:.4g}</text>')
    for t in nice_ticks(*fr.ylim):
        if fr.ylim[0] <= t <= fr.ylim[1]:
            py = fr.y(t)
            out.append(f'<line x1="{LEFT - 5}" y1="{py:.2f}" x2="{LEFT}" y2="{py:.2f}" stroke="#000"/>')
            out.append(f'<text x="{LEFT - 8}" y="{py + 4:.2f}" font-size="11" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{(LEFT + W - RIGHT) / 2:.1f}" y="{H - 12}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(TOP + H - BOTTOM) / 2:.1f}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {(TOP + H - BOTTOM) / 2:.1f})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{W / 2:.1f}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>')
    return out


def _doc(body: list[str]) -> str:
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">'
    return "\n".join([head, '<rect width="100%" height="100%" fill="#fff"/>', *body, "</svg>"]) + "\n"


def fic_plot(x, y, xlo=None, xhi=None, ylo=None, yhi=None, labels: Sequence[str] = (),
             colors: Sequence[str] | None = None, xlabel="root-FIC", ylabel="estimate", title="") -> str:
    """Points ``(x, y)`` with optional horizontal and vertical whiskers."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    xs = [x] + [np.asarray(v, float) for v in (xlo, xhi) if v is not None]
    ys = [y] + [np.asarray(v, float) for v in (ylo, yhi) if v is not None]
    fr = _Frame(_lim(np.concatenate(xs)), _lim(np.concatenate(ys)))
    body = _axes(fr, xlabel, ylabel, title)
    for i in range(x.size):
        col = colors[i] if colors else "#000"
        if xlo is not None and xhi is not None:
            body.append(f'<line x1="{fr.x(xlo[i]):.2f}" y1="{fr.y(y[i]):.2f}" x2="{fr.x(xhi[i]):.2f}" '
                        f'y2="{fr.y(y[i]):.2f}" stroke="{col}" stroke-opacity="0.6"/>')
        if ylo is not None and yhi is not None:
            body.append(f'<line x1="{fr.x(x[i]):.2f}" y1="{fr.y(ylo[i]):.2f}" x2="{fr.x(x[i]):.2f}" '
                        f'y2="{fr.y(yhi[i]):.2f}" stroke="{col}" stroke-opacity="0.6"/>')
        body.append(f'<circle cx="{fr.x(x[i]):.2f}" cy="{fr.y(y[i]):.2f}" r="3.5" fill="{col}"/>')
        if i < len(labels) and labels[i]:
            body.append(f'<text x="{fr.x(x[i]) + 6:.2f}" y="{fr.y(y[i]) - 6:.2f}" font-size="10">{escape(labels[i])}</text>')
    return _doc(body)


def line_plot(x, series: Mapping[str, np.ndarray], xlabel="", ylabel="", title="", step: bool = False) -> str:
    x = np.asarray(x, float)
    fr = _Frame(_lim(x, 0.0), _lim(np.concatenate([np.asarray(v, float) for v in series.values()])))
    body = _axes(fr, xlabel, ylabel, title)
    for k, (name, v) in enumerate(series.items()):
        v = np.asarray(v, float)
        col = PALETTE[k % len(PALETTE)]
        pts = []
        for i in range(x.size):
            if step and i:
                pts.append(f"{fr.x(x[i]):.2f},{fr.y(v[i - 1]):.2f}")
            pts.append(f"{fr.x(x[i]):.2f},{fr.y(v[i]):.2f}")
        body.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        body.append(f'<text x="{W - RIGHT - 8}" y="{TOP + 16 + 14 * k}" font-size="11" text-anchor="end" fill="{col}">{escape(name)}</text>')
    return _doc(body)


def heatmap(d1, d2, cat, names: Sequence[str], xlabel="delta1", ylabel="delta2", title="") -> str:
    """Categorical map: ``cat[i, j]`` indexes ``names`` at ``(d1[i], d2[j])``."""
    d1, d2 = np.asarray(d1, float), np.asarray(d2, float)
    h1 = (d1[1] - d1[0]) / 2 if d1.size > 1 else 0.5
    h2 = (d2[1] - d2[0]) / 2 if d2.size > 1 else 0.5
    fr = _Frame((d1[0] - h1, d1[-1] + h1), (d2[0] - h2, d2[-1] + h2))
    body = []
    for i in range(d1.size):
        for j in range(d2.size):
            x0, x1 = fr.x(d1[i] - h1), fr.x(d1[i] + h1)
            y0, y1 = fr.y(d2[j] + h2), fr.y(d2[j] - h2)
            body.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0 + 0.3:.2f}" height="{y1 - y0 + 0.3:.2f}" '
                        f'fill="{PALETTE[int(cat[i, j]) % len(PALETTE)]}"/>')
    body += _axes(fr, xlabel, ylabel, title)
    for k, name in enumerate(names):
        body.append(f'<text x="{W - RIGHT - 8}" y="{TOP + 16 + 14 * k}" font-size="11" text-anchor="end" '
                    f'fill="{PALETTE[k % len(PALETTE)]}">{escape(name)}</text>')
    return _doc(body)


def write(path, svg: str) -> None:
    Path(path).write_text(svg)
