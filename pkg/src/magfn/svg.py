"""Hand-rolled SVG polyline charts (no plotting dependency).

Stacked panels, one polyline per labeled series, linear axes with a few
ticks. Good enough for eyeballing training curves.
"""

from __future__ import annotations

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_W, _H = 640, 220
_ML, _MR, _MT, _MB = 60, 16, 26, 30


def _ticks(lo: float, hi: float, n: int = 4):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def _panel(title: str, series, y_offset: int) -> list[str]:
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys if y is not None]
    if not xs_all:
        xs_all = [0.0, 1.0]
    if not ys_all:
        ys_all = [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    px = lambda x: _ML + (_W - _ML - _MR) * (x - x_lo) / (x_hi - x_lo)
    py = lambda y: y_offset + _H - _MB - (_H - _MT - _MB) * (y - y_lo) / (y_hi - y_lo)
    out = [
        f'<text x="{_ML}" y="{y_offset + 16}" font-size="13" '
        f'font-family="sans-serif" font-weight="bold">{title}</text>'
    ]
    out.append(
        f'<rect x="{_ML}" y="{y_offset + _MT}" width="{_W - _ML - _MR}" '
        f'height="{_H - _MT - _MB}" fill="none" stroke="#999"/>'
    )
    for t in _ticks(y_lo, y_hi):
        out.append(
            f'<text x="{_ML - 6}" y="{py(t) + 4:.1f}" font-size="10" '
            f'font-family="sans-serif" text-anchor="end">{t:.4g}</text>'
        )
        out.append(
            f'<line x1="{_ML}" y1="{py(t):.1f}" x2="{_W - _MR}" y2="{py(t):.1f}" '
            f'stroke="#eee"/>'
        )
    for t in _ticks(x_lo, x_hi):
        out.append(
            f'<text x="{px(t):.1f}" y="{y_offset + _H - _MB + 14}" font-size="10" '
            f'font-family="sans-serif" text-anchor="middle">{t:.4g}</text>'
        )
    for i, (label, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(
            f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys) if y is not None
        )
        if pts:
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"/>'
            )
        out.append(
            f'<text x="{_W - _MR - 4}" y="{y_offset + _MT + 14 + 13 * i}" '
            f'font-size="11" font-family="sans-serif" text-anchor="end" '
            f'fill="{color}">{label}</text>'
        )
    return out


def write_curves(path, panels):
    """``panels``: list of (title, series); series: (label, xs, ys) triples.

    ``ys`` entries may be None (gaps are skipped).
    """
    height = _H * len(panels)
    body = []
    for i, (title, series) in enumerate(panels):
        body.extend(_panel(title, series, i * _H))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
        f'height="{height}" viewBox="0 0 {_W} {height}">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
