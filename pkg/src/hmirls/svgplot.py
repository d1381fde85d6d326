"""Dependency-free static SVG line charts (SVG 1.1, deterministic output)."""

import math
from xml.sax.saxutils import escape

__all__ = ["line_chart"]

PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]

WIDTH, HEIGHT = 860, 520
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 180, 40, 55
LOG_FLOOR = 1e-17  # nonpositive values on a log axis are clamped here


def _nice_ticks(lo, hi, target=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _fmt(v) -> str:
    return format(v, ".2f")


def _fmt_tick(v) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return format(v, ".0e")
    return format(v, ".6g")


def line_chart(curves, title, xlabel, ylabel, ylog=False, ylim=None):
    """Render labeled (xs, ys) polylines into an SVG document string.

    curves: list of (label, xs, ys). With ylog=True the y axis is log10 with
    decade ticks; nonpositive values are clamped to a tiny floor.
    """
    pts = [(x, y) for _, xs, ys in curves for x, y in zip(xs, ys)]
    if not pts:
        raise ValueError("no data to plot")
    xmin = min(x for x, _ in pts)
    xmax = max(x for x, _ in pts)
    if xmax == xmin:
        xmax = xmin + 1.0

    def ty(v):
        if ylog:
            return math.log10(max(v, LOG_FLOOR))
        return v

    ys_all = [ty(y) for _, y in pts]
    if ylim is not None:
        ymin, ymax = ty(ylim[0]), ty(ylim[1])
    else:
        ymin, ymax = min(ys_all), max(ys_all)
        if ylog:
            ymin, ymax = math.floor(ymin), math.ceil(ymax)
        if ymax == ymin:
            ymax = ymin + 1.0

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - xmin) / (xmax - xmin) * plot_w

    def sy(y):
        return MARGIN_T + (ymax - ty(y)) / (ymax - ymin) * plot_h

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{escape(title)}</text>',
    ]

    axis_style = 'stroke="#333" stroke-width="1"'
    x0, y0 = MARGIN_L, MARGIN_T + plot_h
    out.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" {axis_style}/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" {axis_style}/>')

    for t in _nice_ticks(xmin, xmax):
        if t < xmin - 1e-12 or t > xmax + 1e-12:
            continue
        px = sx(t)
        out.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" y2="{y0 + 5}" {axis_style}/>')
        out.append(
            f'<text x="{_fmt(px)}" y="{y0 + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{_fmt_tick(t)}</text>'
        )
    if ylog:
        yticks = range(math.ceil(ymin), math.floor(ymax) + 1)
        ylabels = [f"1e{k}" for k in yticks]
    else:
        yticks = [t for t in _nice_ticks(ymin, ymax) if ymin - 1e-12 <= t <= ymax + 1e-12]
        ylabels = [_fmt_tick(t) for t in yticks]
    for t, lab in zip(yticks, ylabels):
        py = MARGIN_T + (ymax - t) / (ymax - ymin) * plot_h
        out.append(f'<line x1="{x0 - 5}" y1="{_fmt(py)}" x2="{x0}" y2="{_fmt(py)}" {axis_style}/>')
        out.append(
            f'<text x="{x0 - 8}" y="{_fmt(py + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{lab}</text>'
        )

    out.append(
        f'<text x="{MARGIN_L + plot_w // 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="18" y="{MARGIN_T + plot_h // 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {MARGIN_T + plot_h // 2})">{escape(ylabel)}</text>'
    )

    for k, (label, xs, ys) in enumerate(curves):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
        if coords:
            out.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                f'points="{coords}"/>'
            )
        ly = MARGIN_T + 16 + 18 * k
        lx = MARGIN_L + plot_w + 14
        out.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{escape(label)}</text>'
        )

    out.append("</svg>")
    return "\n".join(out) + "\n"
