"""Dependency-free SVG line plots on a fixed 800 x 300 canvas."""

from __future__ import annotations

from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 800, 300
_MARGIN = (50, 20, 30, 40)  # left, right, top, bottom
_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _polyline(x, y, xlim, ylim, colour) -> str:
    left, right, top, bottom = _MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    xs = left + (np.asarray(x, float) - xlim[0]) / (xlim[1] - xlim[0]) * pw
    ys = top + ph - (np.asarray(y, float) - ylim[0]) / (ylim[1] - ylim[0]) * ph
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))
    return f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>'


def line_plot(series: list[tuple[str, np.ndarray, np.ndarray]], title: str, xlabel: str = "") -> str:
    """``series`` is a list of ``(label, x, y)``; returns SVG text."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    xlim = (float(xs.min()), float(xs.max()) if xs.max() > xs.min() else float(xs.min()) + 1)
    lo, hi = float(ys.min()), float(ys.max())
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    ylim = (lo - pad, hi + pad)
    left, right, top, bottom = _MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{WIDTH - left - right}" height="{HEIGHT - top - bottom}" '
        'fill="none" stroke="#888"/>',
        f'<text x="{WIDTH / 2:.0f}" y="18" text-anchor="middle" font-size="13">{_escape(title)}</text>',
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 8}" text-anchor="middle" font-size="11">{_escape(xlabel)}</text>',
        f'<text x="{left}" y="{HEIGHT - bottom + 14}" font-size="10">{xlim[0]:.2f}</text>',
        f'<text x="{WIDTH - right}" y="{HEIGHT - bottom + 14}" text-anchor="end" font-size="10">{xlim[1]:.2f}</text>',
    ]
    for i, (label, x, y) in enumerate(series):
        colour = _COLOURS[i % len(_COLOURS)]
        parts.append(_polyline(x, y, xlim, ylim, colour))
        parts.append(
            f'<text x="{WIDTH - right - 5}" y="{top + 14 + 14 * i}" text-anchor="end" font-size="11" '
            f'fill="{colour}">{_escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_waveform_plot(path, pred, gt, fs: float, title: str) -> None:
    t = np.arange(len(gt)) / fs
    Path(path).write_text(line_plot([("predicted", t, pred), ("ground truth", t, gt)], title, "time (s)"))


def write_psd_plot(path, pred_spec, gt_spec, title: str, band=(0.5, 4.5)) -> None:
    series = []
    for label, spec in (("predicted", pred_spec), ("ground truth", gt_spec)):
        sel = (spec.freqs >= band[0]) & (spec.freqs <= band[1])
        p = spec.power[sel]
        series.append((label, spec.freqs[sel] * 60.0, p / p.max() if p.max() > 0 else p))
    Path(path).write_text(line_plot(series, title, "heart rate (bpm)"))
