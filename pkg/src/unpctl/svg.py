"""Minimal deterministic SVG writers (polylines and a polar heat map)."""

from __future__ import annotations

import math

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def _f(v: float) -> str:
    return f"{v:.3f}"


def _frame(w, h, title):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
            f'<rect width="{w}" height="{h}" fill="white"/>',
            f'<text x="{w / 2}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">{title}</text>']


def line_plot(series, title: str = "", width: int = 480, height: int = 360, equal_aspect: bool = False) -> str:
    """``series`` is a list of ``(label, xs, ys)``."""
    pad = 40
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    fin = np.isfinite(xs_all) & np.isfinite(ys_all)
    x0, x1 = float(xs_all[fin].min()), float(xs_all[fin].max())
    y0, y1 = float(ys_all[fin].min()), float(ys_all[fin].max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    sx = (width - 2 * pad) / (x1 - x0)
    sy = (height - 2 * pad) / (y1 - y0)
    if equal_aspect:
        sx = sy = min(sx, sy)
    out = _frame(width, height, title)
    out.append(f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
               f'fill="none" stroke="#999"/>')
    for k, (label, xs, ys) in enumerate(series):
        pts = [f"{_f(pad + (x - x0) * sx)},{_f(height - pad - (y - y0) * sy)}"
               for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{pad + 6}" y="{pad + 14 + 14 * k}" font-family="sans-serif" font-size="11" '
                   f'fill="{color}">{label}</text>')
    out.append(f'<text x="{pad}" y="{height - 12}" font-family="sans-serif" font-size="10">{x0:.3g}</text>')
    out.append(f'<text x="{width - pad}" y="{height - 12}" text-anchor="end" font-family="sans-serif" '
               f'font-size="10">{x1:.3g}</text>')
    out.append(f'<text x="4" y="{height - pad}" font-family="sans-serif" font-size="10">{y0:.3g}</text>')
    out.append(f'<text x="4" y="{pad + 8}" font-family="sans-serif" font-size="10">{y1:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _shade(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    r = int(255 - 200 * t)
    g = int(255 - 150 * t)
    b = int(255 - 40 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def polar_heatmap(radii, angle_edges, values, title: str = "", size: int = 420) -> str:
    """Annular sectors: ``values[j, k]`` fills angle bin j, radial bin k."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    c = size / 2
    s = (size / 2 - 30) / radii[-1]
    vmax = float(values.max()) if values.size and values.max() > 0 else 1.0
    out = _frame(size, size, title)
    for j in range(values.shape[0]):
        a0, a1 = angle_edges[j], angle_edges[j + 1]
        for k in range(values.shape[1]):
            r0, r1 = radii[k] * s, radii[k + 1] * s
            col = _shade(values[j, k] / vmax)
            if a1 - a0 >= 2 * math.pi - 1e-12:
                out.append(f'<circle cx="{c}" cy="{c}" r="{_f((r0 + r1) / 2)}" fill="none" '
                           f'stroke="{col}" stroke-width="{_f(max(r1 - r0, 0.5))}"/>')
                continue
            big = 1 if a1 - a0 > math.pi else 0
            p = [(c + r * math.cos(a), c - r * math.sin(a)) for r, a in ((r1, a0), (r1, a1), (r0, a1), (r0, a0))]
            d = (f"M{_f(p[0][0])},{_f(p[0][1])} A{_f(r1)},{_f(r1)} 0 {big} 0 {_f(p[1][0])},{_f(p[1][1])} "
                 f"L{_f(p[2][0])},{_f(p[2][1])} A{_f(r0)},{_f(r0)} 0 {big} 1 {_f(p[3][0])},{_f(p[3][1])} Z")
            out.append(f'<path d="{d}" fill="{col}" stroke="none"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
