"""Two static chart types as plain SVG text (boxplot, line chart)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _frame(title: str, xlabel: str, ylabel: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{(LEFT + W - RIGHT) / 2:.0f}" y="{H - 15}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="18" y="{(TOP + H - BOTTOM) / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(TOP + H - BOTTOM) / 2:.0f})">{escape(ylabel)}</text>',
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
    ]


def _yaxis(lo: float, hi: float):
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def y(v):
        return H - BOTTOM - (v - lo) / (hi - lo) * (H - BOTTOM - TOP)

    ticks = []
    for v in np.linspace(lo, hi, 6):
        ticks.append(f'<line x1="{LEFT - 4}" y1="{_f(y(v))}" x2="{LEFT}" y2="{_f(y(v))}" stroke="black"/>')
        ticks.append(
            f'<text x="{LEFT - 6}" y="{_f(y(v) + 4)}" text-anchor="end">{v:.3g}</text>'
        )
    return y, ticks


def boxplot(groups: dict, title: str = "", xlabel: str = "", ylabel: str = "",
            reference: float | None = None) -> str:
    """Box (quartiles), whiskers (min/max) and median per group label."""
    labels = list(groups)
    data = [np.asarray(groups[k], dtype=float) for k in labels]
    allv = np.concatenate(data + ([np.array([reference])] if reference is not None else []))
    y, ticks = _yaxis(float(allv.min()), float(allv.max()))
    out = _frame(title, xlabel, ylabel) + ticks
    if reference is not None:
        out.append(f'<line x1="{LEFT}" y1="{_f(y(reference))}" x2="{W - RIGHT}" '
                   f'y2="{_f(y(reference))}" stroke="gray" stroke-dasharray="4 3"/>')
    step = (W - RIGHT - LEFT) / max(len(labels), 1)
    for i, (lab, v) in enumerate(zip(labels, data)):
        cx = LEFT + step * (i + 0.5)
        q0, q1, q2, q3, q4 = np.quantile(v, [0, 0.25, 0.5, 0.75, 1])
        half = min(25.0, step / 3)
        out += [
            f'<line x1="{_f(cx)}" y1="{_f(y(q0))}" x2="{_f(cx)}" y2="{_f(y(q4))}" stroke="black"/>',
            f'<rect x="{_f(cx - half)}" y="{_f(y(q3))}" width="{_f(2 * half)}" '
            f'height="{_f(max(y(q1) - y(q3), 0.5))}" fill="#9ecae1" stroke="black"/>',
            f'<line x1="{_f(cx - half)}" y1="{_f(y(q2))}" x2="{_f(cx + half)}" '
            f'y2="{_f(y(q2))}" stroke="black" stroke-width="2"/>',
            f'<text x="{_f(cx)}" y="{H - BOTTOM + 18}" text-anchor="middle">{escape(str(lab))}</text>',
        ]
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_chart(x, series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """One polyline with point markers per series, legend on the right."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    allv = np.concatenate(list(ys.values()))
    y, ticks = _yaxis(float(allv.min()), float(allv.max()))
    x0, x1 = float(x.min()), float(x.max())
    span = x1 - x0 if x1 > x0 else 1.0

    def px(v):
        return LEFT + (v - x0) / span * (W - RIGHT - LEFT)

    out = _frame(title, xlabel, ylabel) + ticks
    for v in x:
        out.append(f'<text x="{_f(px(v))}" y="{H - BOTTOM + 18}" text-anchor="middle">{v:g}</text>')
    for i, (name, v) in enumerate(ys.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_f(px(a))},{_f(y(b))}" for a, b in zip(x, v))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for a, b in zip(x, v):
            out.append(f'<circle cx="{_f(px(a))}" cy="{_f(y(b))}" r="3" fill="{color}"/>')
        ly = TOP + 20 * i + 10
        out.append(f'<line x1="{W - RIGHT + 15}" y1="{ly}" x2="{W - RIGHT + 40}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 46}" y="{ly + 4}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
