"""Minimal SVG scatter / line plots (no charting dependency)."""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple
from xml.sax.saxutils import escape

W, H = 480, 360
PAD = 56


def _range(v: Sequence[float]) -> Tuple[float, float]:
    finite = [x for x in v if math.isfinite(x)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def plot(series: Sequence[Tuple[str, Sequence[float], Sequence[float], str]], xlabel: str, ylabel: str,
         title: str = "", line: Optional[Tuple[float, float]] = None) -> str:
    """Render ``(label, xs, ys, style)`` series; style is ``"dots"`` or ``"line"``.

    ``line`` draws ``y = slope * x + intercept`` across the x-range.
    """
    xs_all = [x for _, xs, _, _ in series for x in xs]
    ys_all = [y for _, _, ys, _ in series for y in ys]
    x0, x1 = _range(xs_all)
    y0, y1 = _range(ys_all)

    def px(x):
        return PAD + (x - x0) / (x1 - x0) * (W - 2 * PAD)

    def py(y):
        return H - PAD - (y - y0) / (y1 - y0) * (H - 2 * PAD)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>']
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{_fmt(px(xv))}" y="{H - PAD + 16}" font-size="10" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{PAD - 6}" y="{_fmt(py(yv) + 3)}" font-size="10" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 12}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{H / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{W / 2}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
    for i, (label, xs, ys, style) in enumerate(series):
        c = colors[i % len(colors)]
        pts = [(px(x), py(y)) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
        if style == "line" and len(pts) > 1:
            path = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        else:
            out.extend(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="4" fill="{c}"/>' for a, b in pts)
        out.append(f'<text x="{W - PAD}" y="{PAD + 14 * i}" font-size="10" text-anchor="end" fill="{c}">'
                   f'{escape(label)}</text>')
    if line is not None:
        slope, icpt = line
        out.append(f'<line x1="{_fmt(px(x0))}" y1="{_fmt(py(slope * x0 + icpt))}" x2="{_fmt(px(x1))}" '
                   f'y2="{_fmt(py(slope * x1 + icpt))}" stroke="gray" stroke-dasharray="4 3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
