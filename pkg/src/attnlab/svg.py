"""Minimal deterministic SVG line charts (polylines, axes, legend)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf", "#bcbd22")

PANEL_W = 520
PANEL_H = 300
MARGIN_L = 70
MARGIN_R = 20
MARGIN_T = 30
MARGIN_B = 40
LEGEND_W = 180


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.1e}"
    return f"{v:.3g}"


def _nice_range(lo: float, hi: float):
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def line_chart(panels, title: str = "") -> str:
    """Render one or more panels stacked vertically.

    ``panels`` is a list of dicts ``{"field": str, "logy": bool, "series":
    [(label, xs, ys), ...]}``. Non-finite points, and non-positive ones on a
    log axis, break the line.
    """
    labels = []
    for p in panels:
        for label, _, _ in p["series"]:
            if label not in labels:
                labels.append(label)
    color = {lab: PALETTE[i % len(PALETTE)] for i, lab in enumerate(labels)}
    width = MARGIN_L + PANEL_W + MARGIN_R + LEGEND_W
    panel_total = MARGIN_T + PANEL_H + MARGIN_B
    height = panel_total * len(panels) + 20
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="14" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for k, panel in enumerate(panels):
        out.extend(_panel(panel, 20 + k * panel_total, color))
    ly = 20 + MARGIN_T
    lx = MARGIN_L + PANEL_W + MARGIN_R + 10
    for i, lab in enumerate(labels):
        y = ly + 16 * i
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 20}" y2="{y}" stroke="{color[lab]}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{y + 4}">{escape(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _panel(panel, top, color):
    logy = panel.get("logy", False)
    pts = []
    for label, xs, ys in panel["series"]:
        for x, y in zip(xs, ys):
            if y is None or not math.isfinite(y) or (logy and y <= 0):
                continue
            pts.append((x, math.log10(y) if logy else y))
    x0, y0 = MARGIN_L, top + MARGIN_T
    out = [
        f'<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#333"/>',
        f'<text x="{x0 + PANEL_W / 2:.1f}" y="{y0 - 8}" text-anchor="middle">'
        f"{escape(panel['field'])}{' (log scale)' if logy else ''}</text>",
    ]
    if not pts:
        return out
    xlo, xhi = _nice_range(min(p[0] for p in pts), max(p[0] for p in pts))
    ylo, yhi = _nice_range(min(p[1] for p in pts), max(p[1] for p in pts))

    def sx(x):
        return x0 + (x - xlo) / (xhi - xlo) * PANEL_W

    def sy(y):
        return y0 + PANEL_H - (y - ylo) / (yhi - ylo) * PANEL_H

    for i in range(5):
        fy = ylo + (yhi - ylo) * i / 4
        py = sy(fy)
        val = 10**fy if logy else fy
        out.append(f'<line x1="{x0 - 4}" y1="{_fmt(py)}" x2="{x0}" y2="{_fmt(py)}" stroke="#333"/>')
        out.append(f'<text x="{x0 - 6}" y="{_fmt(py + 4)}" text-anchor="end">{_tick(val)}</text>')
        fx = xlo + (xhi - xlo) * i / 4
        px = sx(fx)
        out.append(f'<line x1="{_fmt(px)}" y1="{y0 + PANEL_H}" x2="{_fmt(px)}" y2="{y0 + PANEL_H + 4}" stroke="#333"/>')
        out.append(f'<text x="{_fmt(px)}" y="{y0 + PANEL_H + 16}" text-anchor="middle">{_tick(fx)}</text>')
    out.append(f'<text x="{x0 + PANEL_W / 2:.1f}" y="{y0 + PANEL_H + 32}" text-anchor="middle">step</text>')
    for label, xs, ys in panel["series"]:
        segs, cur = [], []
        for x, y in zip(xs, ys):
            if y is None or not math.isfinite(y) or (logy and y <= 0):
                if cur:
                    segs.append(cur)
                cur = []
                continue
            cur.append(f"{_fmt(sx(x))},{_fmt(sy(math.log10(y) if logy else y))}")
        if cur:
            segs.append(cur)
        for seg in segs:
            out.append(
                f'<polyline fill="none" stroke="{color[label]}" stroke-width="1.5" points="{" ".join(seg)}"/>'
            )
    return out
