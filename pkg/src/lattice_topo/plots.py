"""Minimal self-contained SVG: diagram scatter plots and step curves."""

from xml.sax.saxutils import escape

import numpy as np

W, H, PAD = 420, 420, 48


def _scale(lo, hi, a, b):
    span = (hi - lo) or 1.0
    return lambda v: a + (np.asarray(v, float) - lo) * (b - a) / span


def _frame(title, xlabel, ylabel, xr, yr):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD // 2}" width="{W - PAD * 1.5:.0f}" height="{H - PAD * 1.5:.0f}" '
        'fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="14" text-anchor="middle" font-size="12">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 6}" text-anchor="middle" font-size="11">{escape(xlabel)} '
        f'[{xr[0]:.3g}, {xr[1]:.3g}]</text>',
        f'<text x="12" y="{H / 2}" font-size="11" transform="rotate(-90 12 {H / 2})" '
        f'text-anchor="middle">{escape(ylabel)} [{yr[0]:.3g}, {yr[1]:.3g}]</text>',
    ]


def diagram_svg(points, title="persistence diagram", hull=None):
    pts = np.asarray(points, float).reshape(-1, 2)
    lo = float(pts.min()) if len(pts) else 0.0
    hi = float(pts.max()) if len(pts) else 1.0
    sx = _scale(lo, hi, PAD, W - PAD // 2)
    sy = _scale(lo, hi, H - PAD, PAD // 2)
    out = _frame(title, "birth", "death", (lo, hi), (lo, hi))
    out.append(f'<line x1="{sx(lo):.1f}" y1="{sy(lo):.1f}" x2="{sx(hi):.1f}" y2="{sy(hi):.1f}" '
               'stroke="gray" stroke-dasharray="4 3"/>')
    for b, d in pts:
        out.append(f'<circle cx="{sx(b):.1f}" cy="{sy(d):.1f}" r="1.6" fill="steelblue"/>')
    if hull is not None and len(hull) >= 3:
        poly = " ".join(f"{sx(b):.1f},{sy(d):.1f}" for b, d in hull)
        out.append(f'<polygon points="{poly}" fill="none" stroke="firebrick"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def step_svg(x, series, title="curves", xlabel="level", ylabel="count"):
    """``series`` maps a label to y-values aligned with ``x``."""
    x = np.asarray(x, float)
    ys = {k: np.asarray(v, float) for k, v in series.items()}
    ymax = max((float(v.max()) for v in ys.values() if len(v)), default=1.0)
    xr = (float(x.min()), float(x.max())) if len(x) else (0.0, 1.0)
    sx = _scale(xr[0], xr[1], PAD, W - PAD // 2)
    sy = _scale(0.0, ymax, H - PAD, PAD // 2)
    out = _frame(title, xlabel, ylabel, xr, (0.0, ymax))
    colours = ["steelblue", "firebrick", "darkgreen", "darkorange"]
    for k, (label, y) in enumerate(ys.items()):
        pts = []
        for i in range(len(x)):
            if i:
                pts.append(f"{sx(x[i]):.1f},{sy(y[i - 1]):.1f}")
            pts.append(f"{sx(x[i]):.1f},{sy(y[i]):.1f}")
        col = colours[k % len(colours)]
        out.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{col}"/>')
        out.append(f'<text x="{W - PAD}" y="{PAD + 14 * k}" font-size="11" fill="{col}" '
                   f'text-anchor="end">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
