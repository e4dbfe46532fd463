"""Dependency-free SVG emission for heatmaps and line charts.

Output strings are fully deterministic (fixed float formatting, no
timestamps) so files can be compared byte-for-byte in tests.
"""

from __future__ import annotations

import numpy as np

__all__ = ["heatmap_svg", "line_chart_svg"]


def _diverging_color(v: float) -> str:
    """Map [-1, 1] to blue-white-red."""
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, int(round(255 * (1 - v))), int(round(255 * (1 - v)))
    else:
        r, g, b = int(round(255 * (1 + v))), int(round(255 * (1 + v))), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(values: np.ndarray, cell: int = 3) -> str:
    """T x F matrix as an SVG grid, time horizontal, band 0 at the bottom.

    The image is width = T*cell, height = F*cell. Values are scaled by
    the max absolute value onto a blue-white-red diverging map.
    """
    vals = np.asarray(values, dtype=np.float64)
    t_dim, f_dim = vals.shape
    peak = np.abs(vals).max()
    scaled = vals / peak if peak > 0 else vals
    width, height = t_dim * cell, f_dim * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    ]
    for f in range(f_dim):
        y = (f_dim - 1 - f) * cell  # band 0 at the bottom
        for t in range(t_dim):
            color = _diverging_color(float(scaled[t, f]))
            parts.append(
                f'<rect x="{t * cell}" y="{y}" width="{cell}" height="{cell}" fill="{color}"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


def line_chart_svg(
    x: list[float],
    series: dict[str, list[float]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    width: int = 640,
    height: int = 400,
) -> str:
    """Simple multi-series line chart with axes and a text legend."""
    margin = 60
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    xs = [float(v) for v in x]
    all_y = [float(v) for ys in series.values() for v in ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(v):
        return margin + (v - x_lo) / (x_hi - x_lo) * plot_w

    def py(v):
        return height - margin - (v - y_lo) / (y_hi - y_lo) * plot_h

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">{title}</text>'
        )
    if x_label:
        parts.append(
            f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
            f'font-size="12">{x_label}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {height / 2:.1f})">{y_label}</text>'
        )
    for tick in (x_lo, (x_lo + x_hi) / 2, x_hi):
        parts.append(
            f'<text x="{px(tick):.1f}" y="{height - margin + 16}" text-anchor="middle" '
            f'font-size="10">{tick:.4g}</text>'
        )
    for tick in (y_lo, (y_lo + y_hi) / 2, y_hi):
        parts.append(
            f'<text x="{margin - 6}" y="{py(tick):.1f}" text-anchor="end" '
            f'font-size="10">{tick:.4g}</text>'
        )
    for i, (name, ys) in enumerate(series.items()):
        color = palette[i % len(palette)]
        pts = " ".join(f"{px(xv):.2f},{py(yv):.2f}" for xv, yv in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * i + 10}" font-size="10" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
