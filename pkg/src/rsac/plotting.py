"""SVG line charts of training metrics, written without a plotting library.

Each chart has one curve per ce_target level: the across-seed mean at each
evaluation step with a mean ± standard-error band. Every plotted point is
also emitted as a ``<circle>`` carrying ``data-step``, ``data-mean`` and
``data-stderr`` attributes (6 significant digits), so the drawn values can
be checked against the CSV aggregates.
"""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .harness import read_metrics

PANELS = (("ce", "Cross-entropy to demonstrator (nats)"),
          ("total_reward", "Total reward per episode"),
          ("beta", "Multiplier beta"))
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 130, "top": 40, "bottom": 50}


class PlotInputError(ValueError):
    pass


def g6(x: float) -> str:
    return f"{x:.6g}"


def aggregate(rows, key: str) -> dict:
    """``{ce_target: [(step, mean, stderr), ...]}`` with stderr = sd(ddof=1)/sqrt(n), 0 for n = 1."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(r["ce_target"], {}).setdefault(r["step"], []).append(r[key])
    out = {}
    for level in sorted(groups):
        series = []
        for step in sorted(groups[level]):
            v = np.asarray(groups[level][step], dtype=float)
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
            series.append((step, float(v.mean()), se))
        out[level] = series
    return out


def _scale(lo, hi, a, b):
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda x: a + (x - lo) * (b - a) / (hi - lo)


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def render_panel(key: str, title: str, agg: dict, targets=()) -> str:
    steps = [s for series in agg.values() for s, _, _ in series]
    lows = [m - e for series in agg.values() for _, m, e in series] + list(targets)
    highs = [m + e for series in agg.values() for _, m, e in series] + list(targets)
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    sx = _scale(min(steps), max(steps), x0, x1)
    pad = 0.05 * (max(highs) - min(lows) or 1.0)
    ylo, yhi = min(lows) - pad, max(highs) + pad
    sy = _scale(ylo, yhi, y0, y1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" data-metric="{key}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15" '
           f'font-family="sans-serif">{escape(title)}</text>',
           f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
           f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
           f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12" '
           f'font-family="sans-serif">environment steps</text>']
    for t in _ticks(min(steps), max(steps)):
        out.append(f'<text x="{sx(t):.1f}" y="{y0 + 16}" text-anchor="middle" font-size="10" '
                   f'font-family="sans-serif">{t:.0f}</text>')
    for t in _ticks(ylo, yhi):
        out.append(f'<text x="{x0 - 6}" y="{sy(t) + 3:.1f}" text-anchor="end" font-size="10" '
                   f'font-family="sans-serif">{t:.3g}</text>')
    for i, (level, series) in enumerate(agg.items()):
        color = COLORS[i % len(COLORS)]
        upper = " ".join(f"{sx(s):.2f},{sy(m + e):.2f}" for s, m, e in series)
        lower = " ".join(f"{sx(s):.2f},{sy(m - e):.2f}" for s, m, e in reversed(series))
        line = " ".join(f"{sx(s):.2f},{sy(m):.2f}" for s, m, _ in series)
        out.append(f'<g class="curve" data-level="{g6(level)}">')
        out.append(f'<polygon class="envelope" points="{upper} {lower}" fill="{color}" '
                   f'fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline class="mean" points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        for s, m, e in series:
            out.append(f'<circle cx="{sx(s):.2f}" cy="{sy(m):.2f}" r="2" fill="{color}" '
                       f'data-step="{s}" data-mean="{g6(m)}" data-stderr="{g6(e)}"/>')
        out.append("</g>")
        ly = MARGIN["top"] + 18 * i + 10
        out.append(f'<line x1="{x1 + 12}" y1="{ly}" x2="{x1 + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x1 + 36}" y="{ly + 4}" font-size="11" font-family="sans-serif">'
                   f'ce_target {g6(level)}</text>')
    for i, target in enumerate(targets):
        color = COLORS[i % len(COLORS)]
        out.append(f'<line class="target" x1="{x0}" y1="{sy(target):.2f}" x2="{x1}" y2="{sy(target):.2f}" '
                   f'stroke="{color}" stroke-dasharray="6,4" data-target="{g6(target)}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def load_rows(metrics_paths) -> list[dict]:
    rows = []
    for p in metrics_paths:
        try:
            rows += read_metrics(p)
        except (OSError, ValueError) as exc:
            raise PlotInputError(str(exc)) from None
    if not rows:
        raise PlotInputError("no metric rows to plot")
    return rows


def plot_metrics(metrics_paths, out_dir) -> list[Path]:
    """Write ce.svg, total_reward.svg and beta.svg; nothing is written on bad input."""
    rows = load_rows(metrics_paths)
    targets = sorted({r["ce_target"] for r in rows})
    docs = {key: render_panel(key, title, aggregate(rows, key), targets if key == "ce" else ())
            for key, title in PANELS}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, doc in docs.items():
        p = out_dir / f"{key}.svg"
        p.write_text(doc)
        paths.append(p)
    return paths
