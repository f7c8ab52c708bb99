"""Minimal static SVG line charts."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

__all__ = ["Series", "line_chart_svg"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_DASH = {"solid": "", "dashed": "6,4", "dashdot": "8,3,2,3", "dotted": "2,3"}


class Series:
    """One polyline: `x`, `y` values, a legend label and a line style."""

    def __init__(self, x, y, label, style="solid", color=None):
        if len(x) != len(y):
            raise ValueError("x and y must have the same length")
        if style not in _DASH:
            raise ValueError(f"unknown style {style!r}")
        self.x = [float(v) for v in x]
        self.y = [float(v) for v in y]
        self.label = label
        self.style = style
        self.color = color


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart_svg(panels, width=420, height=300, title=None):
    """Render one or more side-by-side panels as an SVG document string.

    Parameters
    ----------
    panels : list of dict
        Each with keys ``series`` (list of :class:`Series`), ``xlabel``,
        ``ylabel`` and optional ``ylim`` ``(lo, hi)``.  Non-finite points
        are clipped to the axis range.
    """
    margin = dict(left=60, right=20, top=40, bottom=50)
    total_w = width * len(panels)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{height}" '
        f'viewBox="0 0 {total_w} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{total_w}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{total_w / 2}" y="16" text-anchor="middle" font-size="13">'
                   f"{escape(title)}</text>")
    for p, panel in enumerate(panels):
        ox = p * width
        x0, x1 = ox + margin["left"], ox + width - margin["right"]
        y0, y1 = height - margin["bottom"], margin["top"]
        xs = [v for s in panel["series"] for v in s.x]
        ys = [v for s in panel["series"] for v in s.y if math.isfinite(v)]
        xlo, xhi = min(xs), max(xs)
        if "ylim" in panel:
            ylo, yhi = panel["ylim"]
        else:
            ylo, yhi = (min(ys), max(ys)) if ys else (0.0, 1.0)
        if yhi <= ylo:
            ylo, yhi = ylo - 0.5, yhi + 0.5
        if xhi <= xlo:
            xlo, xhi = xlo - 0.5, xhi + 0.5

        def px(v):
            return x0 + (v - xlo) / (xhi - xlo) * (x1 - x0)

        def py(v):
            if not math.isfinite(v):
                v = ylo if v < 0 or math.isnan(v) else yhi
            v = min(max(v, ylo), yhi)
            return y0 - (v - ylo) / (yhi - ylo) * (y0 - y1)

        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
        for t in _ticks(xlo, xhi):
            out.append(f'<line x1="{px(t):.2f}" y1="{y0}" x2="{px(t):.2f}" y2="{y0 + 4}" stroke="black"/>')
            out.append(f'<text x="{px(t):.2f}" y="{y0 + 16}" text-anchor="middle">{t:.2f}</text>')
        for t in _ticks(ylo, yhi):
            out.append(f'<line x1="{x0 - 4}" y1="{py(t):.2f}" x2="{x0}" y2="{py(t):.2f}" stroke="black"/>')
            out.append(f'<text x="{x0 - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.2f}</text>')
        out.append(f'<text x="{(x0 + x1) / 2}" y="{height - 12}" text-anchor="middle">'
                   f'{escape(panel.get("xlabel", ""))}</text>')
        out.append(f'<text x="{ox + 14}" y="{(y0 + y1) / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 {ox + 14} {(y0 + y1) / 2})">'
                   f'{escape(panel.get("ylabel", ""))}</text>')
        for i, s in enumerate(panel["series"]):
            color = s.color or _COLORS[i % len(_COLORS)]
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(s.x, s.y))
            dash = f' stroke-dasharray="{_DASH[s.style]}"' if _DASH[s.style] else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="1.8"{dash}/>')
            ly = y1 + 4 + 14 * i
            out.append(f'<line x1="{x1 - 110}" y1="{ly}" x2="{x1 - 90}" y2="{ly}" '
                       f'stroke="{color}" stroke-width="1.8"{dash}/>')
            out.append(f'<text x="{x1 - 86}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
