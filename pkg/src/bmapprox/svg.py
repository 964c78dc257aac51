"""Minimal self-contained SVG histograms; no plotting dependency."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["render_histograms"]

_PANEL_W = 520
_PANEL_H = 240
_MARGIN_L = 60
_MARGIN_R = 20
_MARGIN_T = 34
_MARGIN_B = 40


def _panel(values, title, bins, offset_y):
    values = np.asarray(values, dtype=np.float64)
    parts = [
        f'<text x="{_MARGIN_L}" y="{offset_y + 16}" font-size="13" '
        f'font-family="sans-serif">{title} (n={values.size})</text>'
    ]
    plot_w = _PANEL_W - _MARGIN_L - _MARGIN_R
    plot_h = _PANEL_H - _MARGIN_T - _MARGIN_B
    x0, y0 = _MARGIN_L, offset_y + _MARGIN_T
    parts.append(
        f'<rect x="{x0}" y="{y0}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="black" stroke-width="1"/>'
    )
    if values.size:
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo -= 0.5
            hi += 0.5
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
        top = counts.max() or 1
        bar_w = plot_w / bins
        for k, count in enumerate(counts):
            h = plot_h * count / top
            parts.append(
                f'<rect x="{x0 + k * bar_w:.2f}" y="{y0 + plot_h - h:.2f}" '
                f'width="{bar_w:.2f}" height="{h:.2f}" fill="#4878a8" stroke="white" '
                'stroke-width="0.5"/>'
            )
        for frac in (0.0, 0.5, 1.0):
            x = lo + frac * (hi - lo)
            px = x0 + frac * plot_w
            parts.append(
                f'<line x1="{px:.2f}" y1="{y0 + plot_h}" x2="{px:.2f}" '
                f'y2="{y0 + plot_h + 5}" stroke="black"/>'
            )
            parts.append(
                f'<text x="{px:.2f}" y="{y0 + plot_h + 18}" font-size="11" '
                f'font-family="sans-serif" text-anchor="middle">{x:.4g}</text>'
            )
        parts.append(
            f'<text x="{x0 - 8}" y="{y0 + 10}" font-size="11" font-family="sans-serif" '
            f'text-anchor="end">{top}</text>'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{y0 + plot_h}" font-size="11" '
            'font-family="sans-serif" text-anchor="end">0</text>'
        )
    parts.append(
        f'<text x="{x0 - 44}" y="{y0 + plot_h / 2:.2f}" font-size="11" '
        'font-family="sans-serif" transform="rotate(-90 '
        f'{x0 - 44} {y0 + plot_h / 2:.2f})" text-anchor="middle">count</text>'
    )
    return "\n".join(parts)


def render_histograms(path, panels, bins: int = 30) -> None:
    """Write stacked histogram panels; panels is a list of (title, values)."""
    height = _PANEL_H * len(panels)
    body = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_PANEL_W}" '
        f'height="{height}" viewBox="0 0 {_PANEL_W} {height}">',
        f'<rect width="{_PANEL_W}" height="{height}" fill="white"/>',
    ]
    for k, (title, values) in enumerate(panels):
        body.append(_panel(values, title, bins, k * _PANEL_H))
    body.append("</svg>")
    Path(path).write_text("\n".join(body) + "\n", encoding="utf-8", newline="\n")
