"""Dependency-free SVG bar charts for posterior block-count histograms."""

from __future__ import annotations

from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def grouped_bar_svg(title, group_labels, series, width=640, height=360):
    """Render grouped bars: one group per x value, one bar per series.

    ``series`` is a list of (name, values) with values aligned to
    ``group_labels``.  Returns the SVG document as a string.
    """
    margin = 48
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    n_groups = max(1, len(group_labels))
    n_series = max(1, len(series))
    vmax = max((max(vals) if vals else 0.0 for _, vals in series), default=0.0)
    vmax = max(vmax, 1e-12)
    group_w = plot_w / n_groups
    bar_w = 0.8 * group_w / n_series
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(str(title))}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
    ]
    for gi, label in enumerate(group_labels):
        x0 = margin + gi * group_w + 0.1 * group_w
        for si, (_, vals) in enumerate(series):
            v = vals[gi] if gi < len(vals) else 0.0
            h = plot_h * v / vmax
            x = x0 + si * bar_w
            y = height - margin - h
            color = _COLORS[si % len(_COLORS)]
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{h:.2f}" '
                f'fill="{color}"/>'
            )
        parts.append(
            f'<text x="{margin + (gi + 0.5) * group_w:.2f}" y="{height - margin + 16}" '
            f'text-anchor="middle" font-size="11">{escape(str(label))}</text>'
        )
    for si, (name, _) in enumerate(series):
        color = _COLORS[si % len(_COLORS)]
        y = margin + 14 * si
        parts.append(f'<rect x="{width - margin - 110}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(
            f'<text x="{width - margin - 96}" y="{y}" font-size="11">{escape(str(name))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
