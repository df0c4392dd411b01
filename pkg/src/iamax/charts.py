"""Minimal deterministic SVG charts.

Line and bar charts for run reports (dormancy sweeps, attack ratio
tables, error curves) without a plotting dependency.  Output is plain
SVG text with stable float formatting, so identical inputs render
byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f6fb2", "#d1495b", "#3e8e5a", "#8f6bb8", "#c78a2d", "#4a4a4a")

_MARGIN_L = 64
_MARGIN_R = 16
_MARGIN_T = 36
_MARGIN_B = 48


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _tick_values(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    span = hi - lo
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        step = mult * mag
        if span / step <= target:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * span:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _label_fmt(v: float) -> str:
    if abs(v - round(v)) < 1e-9:
        return str(int(round(v)))
    return f"{v:.4g}"


def _frame(width: int, height: int, title: str, xlabel: str, ylabel: str) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">'
            f"{escape(title)}</text>"
        )
    if xlabel:
        parts.append(
            f'<text x="{(_MARGIN_L + width - _MARGIN_R) / 2:.0f}" y="{height - 10}" '
            f'text-anchor="middle">{escape(xlabel)}</text>'
        )
    if ylabel:
        cy = (_MARGIN_T + height - _MARGIN_B) / 2
        parts.append(
            f'<text x="14" y="{cy:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {cy:.0f})">{escape(ylabel)}</text>'
        )
    return parts


def line_chart(
    series: list[tuple[str, list[tuple[float, float]]]],
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 720,
    height: int = 440,
    y_zero: bool = True,
) -> str:
    """Render one or more (x, y) series as polylines with markers."""
    pts = [p for _, data in series for p in data]
    if not pts:
        raise ValueError("line_chart needs at least one point")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if y_zero:
        y_lo = min(y_lo, 0.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def px(x: float) -> float:
        return _MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return _MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = _frame(width, height, title, xlabel, ylabel)
    for tv in _tick_values(y_lo, y_hi):
        y = py(tv)
        parts.append(
            f'<line x1="{_MARGIN_L}" y1="{_fmt(y)}" x2="{width - _MARGIN_R}" '
            f'y2="{_fmt(y)}" stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 6}" y="{_fmt(y + 4)}" text-anchor="end">'
            f"{_label_fmt(tv)}</text>"
        )
    for tv in _tick_values(x_lo, x_hi):
        x = px(tv)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{_MARGIN_T}" x2="{_fmt(x)}" '
            f'y2="{height - _MARGIN_B}" stroke="#eeeeee"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{height - _MARGIN_B + 16}" text-anchor="middle">'
            f"{_label_fmt(tv)}</text>"
        )
    parts.append(
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444444"/>'
    )
    for s, (label, data) in enumerate(series):
        color = PALETTE[s % len(PALETTE)]
        coords = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in data)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        for x, y in data:
            parts.append(
                f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="2.5" fill="{color}"/>'
            )
        if label:
            ly = _MARGIN_T + 14 + 16 * s
            parts.append(
                f'<rect x="{width - _MARGIN_R - 130}" y="{ly - 9}" width="10" height="10" fill="{color}"/>'
            )
            parts.append(
                f'<text x="{width - _MARGIN_R - 115}" y="{ly}">{escape(label)}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(
    categories: list[str],
    series: list[tuple[str, list[float | None]]],
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 720,
    height: int = 440,
) -> str:
    """Render grouped bars; None values leave a gap."""
    if not categories or not series:
        raise ValueError("bar_chart needs categories and series")
    vals = [v for _, data in series for v in data if v is not None]
    y_hi = max(vals + [0.0]) if vals else 1.0
    y_lo = min(vals + [0.0]) if vals else 0.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def py(y: float) -> float:
        return _MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = _frame(width, height, title, xlabel, ylabel)
    for tv in _tick_values(y_lo, y_hi):
        y = py(tv)
        parts.append(
            f'<line x1="{_MARGIN_L}" y1="{_fmt(y)}" x2="{width - _MARGIN_R}" '
            f'y2="{_fmt(y)}" stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 6}" y="{_fmt(y + 4)}" text-anchor="end">'
            f"{_label_fmt(tv)}</text>"
        )
    ncat = len(categories)
    nser = len(series)
    slot = plot_w / ncat
    bar_w = slot * 0.8 / nser
    for c, cat in enumerate(categories):
        x0 = _MARGIN_L + c * slot + slot * 0.1
        parts.append(
            f'<text x="{_fmt(x0 + slot * 0.4)}" y="{height - _MARGIN_B + 16}" '
            f'text-anchor="middle">{escape(cat)}</text>'
        )
        for s, (label, data) in enumerate(series):
            v = data[c]
            if v is None:
                continue
            color = PALETTE[s % len(PALETTE)]
            top = py(max(v, 0.0))
            base = py(min(v, 0.0))
            parts.append(
                f'<rect x="{_fmt(x0 + s * bar_w)}" y="{_fmt(top)}" width="{_fmt(bar_w * 0.92)}" '
                f'height="{_fmt(max(base - top, 0.5))}" fill="{color}"/>'
            )
    for s, (label, _) in enumerate(series):
        if not label:
            continue
        color = PALETTE[s % len(PALETTE)]
        ly = _MARGIN_T + 14 + 16 * s
        parts.append(
            f'<rect x="{width - _MARGIN_R - 130}" y="{ly - 9}" width="10" height="10" fill="{color}"/>'
        )
        parts.append(f'<text x="{width - _MARGIN_R - 115}" y="{ly}">{escape(label)}</text>')
    parts.append(
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444444"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_svg(svg: str, path: str | Path) -> None:
    Path(path).write_text(svg, encoding="utf-8")
