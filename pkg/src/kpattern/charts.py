"""Standalone SVG line charts with no external assets, rendered from CSV.

Accepts wide CSVs (first column is x, every other column a series) or long
CSVs (pass x/y/series column names; duplicate (series, x) pairs are
averaged, which collapses seed repeats into a mean curve).  Output bytes are
deterministic for fixed input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]


@dataclass(frozen=True)
class ChartStyle:
    width: int = 860
    height: int = 520
    margin_left: int = 70
    margin_right: int = 170
    margin_top: int = 50
    margin_bottom: int = 60
    title: str = ""
    x_label: str = ""
    y_label: str = ""


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def read_series_csv(
    csv_path, x: str | None = None, y: str | None = None, series: str | None = None
) -> list[tuple[str, list[tuple[float, float]]]]:
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        cols = reader.fieldnames
    if not cols:
        raise ValueError(f"{csv_path}: malformed CSV, no header row")
    if series is None:
        x = x or cols[0]
        out = []
        for col in cols:
            if col == x:
                continue
            pts = [(float(r[x]), float(r[col])) for r in rows if r[col] != ""]
            out.append((col, pts))
        return out
    if x is None or y is None:
        raise ValueError("long format needs x and y column names")
    grouped: dict[str, dict[float, list[float]]] = {}
    for r in rows:
        key = r[series]
        grouped.setdefault(key, {}).setdefault(float(r[x]), []).append(float(r[y]))
    out = []
    for key in sorted(grouped):
        pts = [(xv, sum(ys) / len(ys)) for xv, ys in sorted(grouped[key].items())]
        out.append((key, pts))
    return out


def line_chart_svg(
    series: list[tuple[str, list[tuple[float, float]]]],
    style: ChartStyle = ChartStyle(),
) -> str:
    s = style
    plot_left, plot_top = s.margin_left, s.margin_top
    plot_right = s.width - s.margin_right
    plot_bottom = s.height - s.margin_bottom
    plot_w = plot_right - plot_left
    plot_h = plot_bottom - plot_top

    xs = [p[0] for _, pts in series for p in pts]
    ys = [p[1] for _, pts in series for p in pts]
    if xs:
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0

    def px(xv):
        return plot_left + (xv - x_lo) / (x_hi - x_lo) * plot_w

    def py(yv):
        return plot_bottom - (yv - y_lo) / (y_hi - y_lo) * plot_h

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{s.width}" '
        f'height="{s.height}" viewBox="0 0 {s.width} {s.height}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
    ]
    if s.title:
        lines.append(
            f'<text x="{s.width / 2:.1f}" y="28" text-anchor="middle" '
            f'font-size="18" font-family="sans-serif">{_escape(s.title)}</text>'
        )
    ticks = 5
    for i in range(ticks + 1):
        yv = y_lo + (y_hi - y_lo) * i / ticks
        ypx = py(yv)
        lines.append(
            f'<line x1="{plot_left}" y1="{ypx:.2f}" x2="{plot_right}" '
            f'y2="{ypx:.2f}" stroke="#dddddd" stroke-width="1"/>'
        )
        lines.append(
            f'<text x="{plot_left - 8}" y="{ypx + 4:.2f}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{yv:.3g}</text>'
        )
        xv = x_lo + (x_hi - x_lo) * i / ticks
        xpx = px(xv)
        lines.append(
            f'<line x1="{xpx:.2f}" y1="{plot_bottom}" x2="{xpx:.2f}" '
            f'y2="{plot_bottom + 5}" stroke="#000000" stroke-width="1"/>'
        )
        lines.append(
            f'<text x="{xpx:.2f}" y="{plot_bottom + 20}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">{xv:.4g}</text>'
        )
    lines.append(
        f'<line x1="{plot_left}" y1="{plot_bottom}" x2="{plot_right}" '
        f'y2="{plot_bottom}" stroke="#000000" stroke-width="1.5"/>'
    )
    lines.append(
        f'<line x1="{plot_left}" y1="{plot_top}" x2="{plot_left}" '
        f'y2="{plot_bottom}" stroke="#000000" stroke-width="1.5"/>'
    )
    if s.x_label:
        lines.append(
            f'<text x="{(plot_left + plot_right) / 2:.1f}" y="{s.height - 14}" '
            f'text-anchor="middle" font-size="13" font-family="sans-serif">'
            f"{_escape(s.x_label)}</text>"
        )
    if s.y_label:
        midy = (plot_top + plot_bottom) / 2
        lines.append(
            f'<text x="18" y="{midy:.1f}" text-anchor="middle" font-size="13" '
            f'font-family="sans-serif" transform="rotate(-90 18 {midy:.1f})">'
            f"{_escape(s.y_label)}</text>"
        )
    legend_x = plot_right + 16
    legend_y = plot_top + 10
    for i, (label, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if len(pts) == 1:
            xv, yv = pts[0]
            lines.append(
                f'<circle cx="{px(xv):.2f}" cy="{py(yv):.2f}" r="4" fill="{color}"/>'
            )
        elif pts:
            coords = " ".join(f"{px(xv):.2f},{py(yv):.2f}" for xv, yv in pts)
            lines.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                f'points="{coords}"/>'
            )
        ly = legend_y + i * 20
        lines.append(
            f'<line x1="{legend_x}" y1="{ly}" x2="{legend_x + 22}" y2="{ly}" '
            f'stroke="{color}" stroke-width="3"/>'
        )
        lines.append(
            f'<text x="{legend_x + 28}" y="{ly + 4}" font-size="12" '
            f'font-family="sans-serif">{_escape(label)}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_svg_lines(
    csv_path,
    out_path,
    style: ChartStyle = ChartStyle(),
    x: str | None = None,
    y: str | None = None,
    series: str | None = None,
) -> Path:
    """Render a CSV as a standalone SVG line chart; returns the output path."""
    data = read_series_csv(csv_path, x=x, y=y, series=series)
    svg = line_chart_svg(data, style)
    out = Path(out_path)
    out.write_text(svg)
    return out
