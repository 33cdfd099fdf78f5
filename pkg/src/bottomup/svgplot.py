"""Hand-rolled SVG line charts; keeps plotting dependency-free.

Not a plotting library: fixed canvas, one polyline per series, optional
log-log axes with decade ticks. CSV artifacts stay canonical; these files
are for eyeballs only.
"""

import math

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 30, 50
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo, hi, log):
    if log:
        first = math.floor(math.log10(lo))
        last = math.ceil(math.log10(hi))
        return [10.0 ** e for e in range(first, last + 1)]
    step = (hi - lo) / 5.0
    return [lo + i * step for i in range(6)]


def line_chart(series, path, title="", xlabel="", ylabel="", loglog=False):
    """Write an SVG chart; `series` maps name -> list of (x, y) pairs."""
    points = [(x, y) for pts in series.values() for x, y in pts]
    if not points:
        raise ValueError("nothing to plot")
    xs, ys = zip(*points)
    tx = math.log10 if loglog else float
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if loglog and (x_lo <= 0 or y_lo <= 0):
        raise ValueError("log axes need positive values")

    def sx(v):
        lo, hi = tx(x_lo), tx(x_hi)
        span = (hi - lo) or 1.0
        return _ML + (tx(v) - lo) / span * (_W - _ML - _MR)

    def sy(v):
        lo, hi = tx(y_lo), tx(y_hi)
        span = (hi - lo) or 1.0
        return _H - _MB - (tx(v) - lo) / span * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="18" text-anchor="middle" '
        f'font-size="14">{title}</text>',
    ]
    for tick in _ticks(x_lo, x_hi, loglog):
        if tick < x_lo * 0.999 or tick > x_hi * 1.001:
            continue
        px = sx(tick)
        parts.append(f'<line x1="{px:.1f}" y1="{_MT}" x2="{px:.1f}" '
                     f'y2="{_H - _MB}" stroke="#ddd"/>')
        parts.append(f'<text x="{px:.1f}" y="{_H - _MB + 16}" '
                     f'text-anchor="middle">{tick:g}</text>')
    for tick in _ticks(y_lo, y_hi, loglog):
        if tick < y_lo * 0.999 or tick > y_hi * 1.001:
            continue
        py = sy(tick)
        parts.append(f'<line x1="{_ML}" y1="{py:.1f}" x2="{_W - _MR}" '
                     f'y2="{py:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{_ML - 6}" y="{py + 4:.1f}" '
                     f'text-anchor="end">{tick:g}</text>')
    parts.append(f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
                 f'height="{_H - _MT - _MB}" fill="none" stroke="#444"/>')
    parts.append(f'<text x="{_W / 2:.0f}" y="{_H - 12}" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="16" y="{_H / 2:.0f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {_H / 2:.0f})">{ylabel}</text>')
    for idx, (name, pts) in enumerate(series.items()):
        color = _COLORS[idx % len(_COLORS)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(pts))
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_W - _MR - 6}" y="{_MT + 16 + 16 * idx}" '
                     f'text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
