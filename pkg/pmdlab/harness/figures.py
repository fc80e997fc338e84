"""
SVG line charts of comparison curves: mean per mirror map with a shaded
+/- one standard-error band.
"""
from html import escape
from typing import List, Sequence, Tuple

import numpy as np

from pmdlab.errors import InputError
from pmdlab.models.schemas import ComparisonReport

FIGURE_KINDS = ("value", "q_error", "update_distance")
AXIS_LABELS = {
    "value": "V(mu)",
    "q_error": "max_s ||Q_hat - Q||_inf",
    "update_distance": "max_s ||pi' - pi||_1",
}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 170, 30, 50


def _scale(lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: out_lo + (np.asarray(v, dtype=np.float64) - lo) / span * (out_hi - out_lo)


def _points(xs: np.ndarray, ys: np.ndarray) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))


def _ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, count))


def emit_figure(report: ComparisonReport, kind: str) -> str:
    """One panel of the comparison as a standalone SVG document."""
    if kind not in FIGURE_KINDS:
        raise InputError(f"unknown figure kind {kind!r}; choose from {', '.join(FIGURE_KINDS)}")
    if not report.maps:
        raise InputError("cannot draw an empty report")

    series: List[Tuple[str, np.ndarray, np.ndarray, np.ndarray, int]] = []
    for summary in report.maps:
        curve = getattr(summary, kind)
        if not curve.mean:
            raise InputError(f"map {summary.map} has no {kind} data")
        series.append((summary.map, np.asarray(summary.steps, dtype=np.float64), np.asarray(curve.mean),
                       np.asarray(curve.stderr), summary.num_seeds))

    x_lo = min(float(s[1].min()) for s in series)
    x_hi = max(float(s[1].max()) for s in series)
    y_lo = min(float((s[2] - s[3]).min()) for s in series)
    y_hi = max(float((s[2] + s[3]).max()) for s in series)
    pad = 0.05 * (y_hi - y_lo) if y_hi > y_lo else 0.5
    y_lo, y_hi = y_lo - pad, y_hi + pad

    left, right = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    top, bottom = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM
    sx = _scale(x_lo, x_hi, left, right)
    sy = _scale(y_lo, y_hi, bottom, top)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<title>{escape(report.environment)}: {escape(kind)}</title>',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        x = float(sx(tx))
        parts.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{bottom + 16}" text-anchor="middle">{tx:.3g}</text>')
    for ty in _ticks(y_lo, y_hi):
        y = float(sy(ty))
        parts.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{ty:.3g}</text>')
    parts.append(f'<text x="{(left + right) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">environment steps</text>')
    parts.append(f'<text x="16" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {(top + bottom) / 2:.1f})">{escape(AXIS_LABELS[kind])}</text>')

    for i, (name, steps, mean, stderr, seeds) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        xs = sx(steps)
        if seeds > 1:
            upper = _points(xs, sy(mean + stderr))
            lower = _points(xs[::-1], sy((mean - stderr)[::-1]))
            parts.append(f'<polygon class="band" points="{upper} {lower}" fill="{color}" '
                         f'fill-opacity="0.2" stroke="none"/>')
        parts.append(f'<polyline class="mean" points="{_points(xs, sy(mean))}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        label = name if seeds > 1 else f"{name} (1 seed, no band)"
        ly = top + 16 * (i + 1)
        parts.append(f'<line x1="{right + 10}" y1="{ly - 4}" x2="{right + 30}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{right + 36}" y="{ly}">{escape(label)}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def summarize(curves: Sequence[Sequence[float]]) -> Tuple[List[float], List[float]]:
    """Mean and standard error (sample std / sqrt(n)) across seeds, per iteration."""
    data = np.asarray(curves, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InputError("need at least one curve")
    mean = data.mean(axis=0)
    if data.shape[0] == 1:
        return mean.tolist(), [0.0] * data.shape[1]
    stderr = data.std(axis=0, ddof=1) / np.sqrt(data.shape[0])
    return mean.tolist(), stderr.tolist()
