"""Dependency-free SVG line plots."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
_MARGIN = dict(left=70, right=20, top=40, bottom=55)
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


def line_plot(
    series: list[tuple[str, np.ndarray, np.ndarray]],
    *,
    title: str,
    xlabel: str,
    ylabel: str,
    xlim: tuple[float, float] | None = None,
    ylim: tuple[float, float] | None = None,
) -> str:
    """Render ``(label, x, y)`` series as one SVG document, one polyline each."""
    clean = []
    for label, x, y in series:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        clean.append((label, x[ok], y[ok]))
    allx = np.concatenate([s[1] for s in clean]) if clean else np.array([0.0, 1.0])
    ally = np.concatenate([s[2] for s in clean]) if clean else np.array([0.0, 1.0])
    x0, x1 = xlim if xlim else (float(allx.min()), float(allx.max()))
    y0, y1 = ylim if ylim else (float(ally.min()), float(ally.max()))
    if y1 <= y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    if x1 <= x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    pl, pr, pt, pb = _MARGIN["left"], WIDTH - _MARGIN["right"], _MARGIN["top"], HEIGHT - _MARGIN["bottom"]

    def sx(v):
        return pl + (v - x0) / (x1 - x0) * (pr - pl)

    def sy(v):
        return pb - (v - y0) / (y1 - y0) * (pb - pt)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xmin="{x0!r}" data-xmax="{x1!r}" '
        f'data-ymin="{y0!r}" data-ymax="{y1!r}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{pl}" y1="{pb}" x2="{pr}" y2="{pb}" stroke="black"/>',
        f'<line x1="{pl}" y1="{pt}" x2="{pl}" y2="{pb}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        X = sx(t)
        out.append(f'<line x1="{X:.2f}" y1="{pb}" x2="{X:.2f}" y2="{pb + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{pb + 18}" text-anchor="middle" font-size="11">{t:g}</text>')
    for t in _ticks(y0, y1):
        Y = sy(t)
        out.append(f'<line x1="{pl - 5}" y1="{Y:.2f}" x2="{pl}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{pl - 8}" y="{Y + 4:.2f}" text-anchor="end" font-size="11">{t:g}</text>')
    out.append(f'<text x="{(pl + pr) / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>')
    out.append(
        f'<text x="18" y="{(pt + pb) / 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {(pt + pb) / 2})">{escape(ylabel)}</text>'
    )
    for k, (label, x, y) in enumerate(clean):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"><title>{escape(label)}</title></polyline>')
        ly = pt + 14 + 16 * k
        out.append(f'<line x1="{pr - 170}" y1="{ly}" x2="{pr - 145}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{pr - 140}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def symmetric_limit(values, floor: float = 1e-3) -> tuple[float, float]:
    v = np.abs(np.asarray(values, float))
    v = v[np.isfinite(v)]
    m = max(float(v.max()) if v.size else 0.0, floor) * 1.1
    return -m, m
