"""Dependency-free SVG line charts for loss curves and forecast bands."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

COLORS = ["#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


@dataclass
class Line:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    color: str = "#000000"
    dashed: bool = False


@dataclass
class Band:
    x: Sequence[float]
    lo: Sequence[float]
    hi: Sequence[float]
    color: str = "#cccccc"


@dataclass
class Chart:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    log_y: bool = False
    width: int = 800
    height: int = 480
    lines: list[Line] = field(default_factory=list)
    bands: list[Band] = field(default_factory=list)

    def y_range(self) -> tuple[float, float]:
        vals = [np.asarray(l.y, dtype=float) for l in self.lines]
        vals += [np.asarray(b.lo, dtype=float) for b in self.bands]
        vals += [np.asarray(b.hi, dtype=float) for b in self.bands]
        v = np.concatenate(vals) if vals else np.array([0.0, 1.0])
        v = v[np.isfinite(v)]
        if self.log_y:
            v = v[v > 0]
        if v.size == 0:
            return (1e-3, 1.0) if self.log_y else (0.0, 1.0)
        lo, hi = float(v.min()), float(v.max())
        if self.log_y:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi - lo < 1e-12:
            pad = abs(hi) * 0.05 or 0.5
            return lo - pad, hi + pad
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    def x_range(self) -> tuple[float, float]:
        xs = [np.asarray(l.x, dtype=float) for l in self.lines] + \
             [np.asarray(b.x, dtype=float) for b in self.bands]
        v = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        lo, hi = float(np.nanmin(v)), float(np.nanmax(v))
        return (lo, hi) if hi > lo else (lo - 0.5, hi + 0.5)

    def render(self) -> str:
        W, H = self.width, self.height
        left, right, top, bottom = 80, 180, 40, 60
        pw, ph = W - left - right, H - top - bottom
        x0, x1 = self.x_range()
        y0, y1 = self.y_range()

        def px(x):
            return left + (x - x0) / (x1 - x0) * pw

        def py(y):
            if self.log_y:
                y = math.log10(y) if y > 0 else -math.inf
            return top + ph - (y - y0) / (y1 - y0) * ph

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            '<rect width="100%" height="100%" fill="#ffffff"/>',
            f'<text x="{W / 2:.1f}" y="24" text-anchor="middle" font-size="16" '
            f'font-family="sans-serif">{_escape(self.title)}</text>',
        ]
        for i in range(6):
            fy = y0 + (y1 - y0) * i / 5
            label = f"1e{fy:.1f}" if self.log_y else f"{fy:.3g}"
            yp = top + ph - ph * i / 5
            out.append(f'<line x1="{left}" y1="{yp:.2f}" x2="{left + pw}" y2="{yp:.2f}" stroke="#e0e0e0"/>')
            out.append(f'<text x="{left - 8}" y="{yp + 4:.2f}" text-anchor="end" font-size="11" '
                       f'font-family="sans-serif">{label}</text>')
            fx = x0 + (x1 - x0) * i / 5
            xp = left + pw * i / 5
            out.append(f'<text x="{xp:.2f}" y="{top + ph + 18}" text-anchor="middle" font-size="11" '
                       f'font-family="sans-serif">{fx:.3g}</text>')
        out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>')
        out.append(f'<text x="{left + pw / 2:.1f}" y="{H - 16}" text-anchor="middle" font-size="13" '
                   f'font-family="sans-serif">{_escape(self.xlabel)}</text>')
        out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="13" '
                   f'font-family="sans-serif" transform="rotate(-90 18 {top + ph / 2:.1f})">'
                   f'{_escape(self.ylabel)}</text>')

        for b in self.bands:
            for seg in _segments(b.x, b.lo, b.hi):
                xs, lo, hi = seg
                pts = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, hi)]
                pts += [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs[::-1], lo[::-1])]
                out.append(f'<polygon class="band" points="{" ".join(pts)}" fill="{b.color}" '
                           f'fill-opacity="0.35" stroke="none"/>')
        for i, ln in enumerate(self.lines):
            dash = ' stroke-dasharray="6,4"' if ln.dashed else ""
            for xs, ys in _segments(ln.x, ln.y):
                pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
                out.append(f'<polyline points="{pts}" fill="none" stroke="{ln.color}" '
                           f'stroke-width="1.5"{dash}/>')
            if ln.label:
                ly = top + 14 + 18 * i
                out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 36}" y2="{ly}" '
                           f'stroke="{ln.color}" stroke-width="2"{dash}/>')
                out.append(f'<text x="{left + pw + 42}" y="{ly + 4}" font-size="11" '
                           f'font-family="sans-serif">{_escape(ln.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.render())


def _segments(x, *ys):
    """Split parallel series at non-finite values (or non-positive ones on log axes)."""
    x = np.asarray(x, dtype=float)
    cols = [np.asarray(y, dtype=float) for y in ys]
    good = np.isfinite(x)
    for c in cols:
        good &= np.isfinite(c)
    segs, start = [], None
    for i, g in enumerate(np.append(good, False)):
        if g and start is None:
            start = i
        elif not g and start is not None:
            segs.append((x[start:i], *[c[start:i] for c in cols]))
            start = None
    return segs


def loss_chart(curves: dict[str, Sequence[float]], title: str, ylabel: str) -> Chart:
    chart = Chart(title=title, xlabel="epoch", ylabel=ylabel, log_y=True)
    for i, (label, ys) in enumerate(curves.items()):
        chart.lines.append(Line(np.arange(1, len(ys) + 1), ys, label, COLORS[i % len(COLORS)]))
    return chart


def forecast_chart(t, truth, mean, lo, hi, title: str, names: Sequence[str] | None = None) -> Chart:
    """Truth (solid), ensemble mean (dashed) and shaded band, one colour per component."""
    truth, mean, lo, hi = (np.asarray(a, dtype=float) for a in (truth, mean, lo, hi))
    d = truth.shape[1]
    names = names or [f"x{i}" for i in range(d)]
    chart = Chart(title=title, xlabel="t (s)", ylabel="state")
    for i in range(d):
        color = COLORS[1 + i % (len(COLORS) - 1)]
        chart.bands.append(Band(t, lo[:, i], hi[:, i], color))
        chart.lines.append(Line(t, truth[:, i], f"{names[i]} truth", color))
        chart.lines.append(Line(t, mean[:, i], f"{names[i]} mean", color, dashed=True))
    return chart
