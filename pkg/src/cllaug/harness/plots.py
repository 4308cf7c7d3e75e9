"""Minimal hand-written SVG charts. CSV stays the canonical output."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _bounds(values, pad=0.05):
    finite = [v for v in values if v is not None and math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        return lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def _log_bounds(values):
    positive = [v for v in values if v is not None and math.isfinite(v) and v > 0]
    if not positive:
        return 1.0, 2.0
    lo, hi = min(positive), max(positive)
    return (lo, hi) if hi > lo else (lo / 2, lo * 2)


def _finite(xs, ys):
    pairs = [(x, y) for x, y in zip(xs, ys)
             if x is not None and y is not None and math.isfinite(x) and math.isfinite(y)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


class _Canvas:
    def __init__(self, x_range, y_range, title, x_label, y_label, log_x=False):
        self.log_x = log_x
        self.x0, self.x1 = (math.log2(v) for v in x_range) if log_x else x_range
        self.y0, self.y1 = y_range
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'font-family="sans-serif" font-size="12">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(x_label)}</text>',
            f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" '
            f'transform="rotate(-90 15 {HEIGHT / 2})">{escape(y_label)}</text>',
        ]
        self._axes()

    def px(self, x):
        if self.log_x:
            x = math.log2(x)
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y):
        return HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)

    def _axes(self):
        left, right, bottom, top = MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN
        self.parts.append(f'<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" '
                          f'stroke="black" fill="none"/>')
        for i in range(5):
            fy = self.y0 + (self.y1 - self.y0) * i / 4
            y = self.py(fy)
            self.parts.append(f'<text x="{left - 5}" y="{y + 4:.1f}" text-anchor="end">{fy:.3g}</text>')
            fx = self.x0 + (self.x1 - self.x0) * i / 4
            x = MARGIN + (WIDTH - 2 * MARGIN) * i / 4
            label = 2 ** fx if self.log_x else fx
            self.parts.append(f'<text x="{x:.1f}" y="{bottom + 16}" text-anchor="middle">{label:.3g}</text>')

    def polyline(self, xs, ys, color, dashed=False):
        xs, ys = _finite(xs, ys)
        if self.log_x:
            keep = [i for i, x in enumerate(xs) if x > 0]
            xs, ys = [xs[i] for i in keep], [ys[i] for i in keep]
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        self.parts.append(f'<polyline points="{pts}" stroke="{color}" fill="none" stroke-width="1.5"{dash}/>')

    def dots(self, xs, ys, color):
        for x, y in zip(*_finite(xs, ys)):
            self.parts.append(f'<circle cx="{self.px(x):.2f}" cy="{self.py(y):.2f}" r="3" fill="{color}"/>')

    def legend(self, names):
        for i, name in enumerate(names):
            y = MARGIN + 16 * i
            color = COLORS[i % len(COLORS)]
            self.parts.append(f'<rect x="{WIDTH - MARGIN - 150}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
            self.parts.append(f'<text x="{WIDTH - MARGIN - 135}" y="{y}">{escape(name)}</text>')

    def save(self, path):
        Path(path).write_text("\n".join(self.parts + ["</svg>"]) + "\n")


def line_chart(path, series: dict, title="", x_label="", y_label="", reference=None, log_x=False):
    """``series`` maps a name to ``(xs, ys)``; ``reference`` draws a dashed horizontal line."""
    xs = [x for s in series.values() for x in s[0]]
    ys = [y for s in series.values() for y in s[1]] + ([reference] if reference is not None else [])
    canvas = _Canvas(_log_bounds(xs) if log_x else _bounds(xs, 0), _bounds(ys), title, x_label, y_label, log_x)
    if reference is not None and xs:
        canvas.polyline([min(xs), max(xs)], [reference, reference], "gray", dashed=True)
    for i, (name, (sx, sy)) in enumerate(series.items()):
        canvas.polyline(sx, sy, COLORS[i % len(COLORS)])
    canvas.legend(list(series))
    canvas.save(path)


def scatter_chart(path, series: dict, title="", x_label="", y_label=""):
    xs = [x for s in series.values() for x in s[0]]
    ys = [y for s in series.values() for y in s[1]]
    canvas = _Canvas(_bounds(xs), _bounds(ys), title, x_label, y_label)
    for i, (name, (sx, sy)) in enumerate(series.items()):
        canvas.dots(sx, sy, COLORS[i % len(COLORS)])
    canvas.legend(list(series))
    canvas.save(path)
