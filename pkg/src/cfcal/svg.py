"""Minimal SVG figures: time-space diagrams and ensemble envelopes."""
from __future__ import annotations

from typing import Sequence

import numpy as np

W, H, PAD = 720, 400, 50


def _scale(vals, lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return a + (np.asarray(vals, dtype=float) - lo) / span * (b - a)


def _speed_colour(v, vmax):
    f = float(np.clip(v / vmax if vmax > 0 else 0.0, 0.0, 1.0))
    # red (slow) to green (fast)
    return f"rgb({int(220 * (1 - f))},{int(40 + 160 * f)},60)"


def _frame(title: str, xlabel: str, ylabel: str, x_rng, y_rng) -> list[str]:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
           f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" '
           'fill="none" stroke="black"/>',
           f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{xlabel}</text>',
           f'<text x="14" y="{H / 2}" text-anchor="middle" '
           f'transform="rotate(-90 14 {H / 2})">{ylabel}</text>']
    for v, x in ((x_rng[0], PAD), (x_rng[1], W - PAD)):
        out.append(f'<text x="{x}" y="{H - PAD + 14}" text-anchor="middle">{v:.4g}</text>')
    for v, y in ((y_rng[0], H - PAD), (y_rng[1], PAD)):
        out.append(f'<text x="{PAD - 4}" y="{y + 4}" text-anchor="end">{v:.4g}</text>')
    return out


def time_space_svg(path, t, x, v, title: str = "time-space diagram", circumference=None,
                   max_points: int = 20000) -> None:
    """Scatter of positions over time coloured by speed; ``x``, ``v`` are [steps, vehicles]."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    step = max(1, int(np.ceil(x.size / max_points)))
    rows = np.arange(0, len(t), step)
    xr = (0.0, float(circumference)) if circumference else (float(x.min()), float(x.max()))
    yr = (float(t[0]), float(t[-1]))
    out = _frame(title, "time (s)", "position (m)", yr, xr)
    vmax = float(v.max()) if v.size else 1.0
    for i in rows:
        px = _scale(t[i], *yr, PAD, W - PAD)
        py = _scale(x[i], *xr, H - PAD, PAD)
        for j in range(x.shape[1]):
            out.append(f'<circle cx="{px:.1f}" cy="{py[j]:.1f}" r="0.8" '
                       f'fill="{_speed_colour(v[i, j], vmax)}"/>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out))


def envelope_svg(path, t, lower, median, upper, truth=None, title: str = "ensemble",
                 ylabel: str = "speed (m/s)") -> None:
    """Quantile band with median line and optional observed series."""
    t = np.asarray(t, dtype=float)
    series = [np.asarray(a, dtype=float) for a in (lower, median, upper)]
    if truth is not None:
        series.append(np.asarray(truth, dtype=float))
    lo = min(float(s.min()) for s in series)
    hi = max(float(s.max()) for s in series)
    xr, yr = (float(t[0]), float(t[-1])), (lo, hi)
    out = _frame(title, "time (s)", ylabel, xr, yr)
    px = _scale(t, *xr, PAD, W - PAD)

    def pts(y):
        py = _scale(y, *yr, H - PAD, PAD)
        return " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))

    band = pts(series[0]).split() + pts(series[2]).split()[::-1]
    out.append(f'<polygon points="{" ".join(band)}" fill="#9ecae1" opacity="0.6"/>')
    out.append(f'<polyline points="{pts(series[1])}" fill="none" stroke="#08519c"/>')
    if truth is not None:
        out.append(f'<polyline points="{pts(series[3])}" fill="none" stroke="black" '
                   'stroke-dasharray="4 2"/>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out))


def lines_svg(path, x, ys: Sequence, labels: Sequence[str], title: str, xlabel: str,
              ylabel: str) -> None:
    """Several labelled polylines sharing one x axis."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(y, dtype=float) for y in ys]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([0.0])
    xr = (float(x.min()), float(x.max()))
    yr = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    out = _frame(title, xlabel, ylabel, xr, yr)
    palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"]
    px = _scale(x, *xr, PAD, W - PAD)
    for k, (y, lab) in enumerate(zip(ys, labels)):
        py = _scale(y, *yr, H - PAD, PAD)
        col = palette[k % len(palette)]
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py) if np.isfinite(b))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        out.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 * (k + 1)}" text-anchor="end" '
                   f'fill="{col}">{lab}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out))
