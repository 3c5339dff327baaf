"""Dependency-free SVG charts for MSE reports.

The nine-panel grid mirrors the report structure: rows OS, OD, OU and
columns SE, AL, SE+AL, so within every row the third panel is the sum of
the first two and within every column the third row is the sum of the
first two rows. ``report_chart`` draws one report as nine bars;
``mode_comparison_chart`` draws one bar per mode in each panel;
``fold_spread_chart`` draws per-fold values as dots with a mean tick.
"""

from xml.sax.saxutils import escape

import numpy as np

__all__ = ["report_chart", "mode_comparison_chart", "fold_spread_chart",
           "PANEL_KEYS"]

PANEL_KEYS = (
    ("os_se", "os_al", "os_total"),
    ("od_se", "od_al", "od_total"),
    ("ou_se", "ou_al", "ou_total"),
)

_PALETTE = ("#7b8a8b", "#2e86ab", "#d1495b", "#6a994e", "#bc6c25")

_PANEL_W = 250
_PANEL_H = 150
_MARGIN = 20
_TITLE_H = 34


def _fmt(value: float) -> str:
    return f"{value:.4g}"


def _svg_header(width: int, height: int, title: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" '
        f'font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" '
        f'font-size="15" fill="#1c1c1c">{escape(title)}</text>',
    ]


def _panel_frame(parts: list, x: float, y: float, key: str) -> None:
    parts.append(
        f'<text x="{x + _PANEL_W / 2:.1f}" y="{y + 12:.1f}" '
        f'text-anchor="middle" font-size="11" fill="#333333">'
        f'{escape(key)}</text>')
    parts.append(
        f'<line x1="{x + 30:.1f}" y1="{y + _PANEL_H - 22:.1f}" '
        f'x2="{x + _PANEL_W - 8:.1f}" y2="{y + _PANEL_H - 22:.1f}" '
        f'stroke="#888888" stroke-width="1"/>')


def _panel_origin(row: int, col: int) -> tuple:
    x = _MARGIN + col * (_PANEL_W + _MARGIN)
    y = _TITLE_H + row * (_PANEL_H + _MARGIN)
    return float(x), float(y)


def _chart_size(legend: bool) -> tuple:
    width = _MARGIN + 3 * (_PANEL_W + _MARGIN)
    height = _TITLE_H + 3 * (_PANEL_H + _MARGIN) + (24 if legend else 0)
    return width, height


def _bars(parts: list, x: float, y: float, values, colors, labels=None) -> None:
    top = y + 20
    floor = y + _PANEL_H - 22
    span = floor - top
    peak = max(max(values), 1e-300) * 1.1
    n = len(values)
    slot = (_PANEL_W - 46) / n
    for i, value in enumerate(values):
        h = span * max(value, 0.0) / peak
        bx = x + 34 + i * slot + slot * 0.15
        bw = slot * 0.7
        parts.append(
            f'<rect x="{bx:.1f}" y="{floor - h:.1f}" width="{bw:.1f}" '
            f'height="{h:.1f}" fill="{colors[i % len(colors)]}"/>')
        parts.append(
            f'<text x="{bx + bw / 2:.1f}" y="{floor - h - 3:.1f}" '
            f'text-anchor="middle" font-size="9" fill="#333333">'
            f'{_fmt(value)}</text>')
        if labels is not None:
            parts.append(
                f'<text x="{bx + bw / 2:.1f}" y="{floor + 11:.1f}" '
                f'text-anchor="middle" font-size="9" fill="#555555">'
                f'{escape(labels[i])}</text>')


def report_chart(report: dict, title: str = "MSE report") -> str:
    """Nine single-bar panels for one report."""
    width, height = _chart_size(legend=False)
    parts = _svg_header(width, height, title)
    for row in range(3):
        for col in range(3):
            key = PANEL_KEYS[row][col]
            x, y = _panel_origin(row, col)
            _panel_frame(parts, x, y, key)
            _bars(parts, x, y, [float(report[key])], _PALETTE[2:])
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _legend(parts: list, width: int, height: int, names) -> None:
    x = _MARGIN
    y = height - 8
    for i, name in enumerate(names):
        parts.append(
            f'<rect x="{x:.1f}" y="{y - 10:.1f}" width="10" height="10" '
            f'fill="{_PALETTE[i % len(_PALETTE)]}"/>')
        parts.append(
            f'<text x="{x + 14:.1f}" y="{y:.1f}" font-size="11" '
            f'fill="#333333">{escape(name)}</text>')
        x += 24 + 7 * len(name)


def mode_comparison_chart(mode_means: dict, title: str = "Mean MSE by mode") -> str:
    """One bar per mode in each of the nine panels."""
    names = list(mode_means)
    width, height = _chart_size(legend=True)
    parts = _svg_header(width, height, title)
    for row in range(3):
        for col in range(3):
            key = PANEL_KEYS[row][col]
            x, y = _panel_origin(row, col)
            _panel_frame(parts, x, y, key)
            _bars(parts, x, y, [float(mode_means[m][key]) for m in names],
                  _PALETTE)
    _legend(parts, width, height, names)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def fold_spread_chart(mode_reports: dict, title: str = "Per-fold MSE") -> str:
    """Per-fold dots with a min-max whisker and a mean tick, per mode."""
    names = list(mode_reports)
    width, height = _chart_size(legend=True)
    parts = _svg_header(width, height, title)
    for row in range(3):
        for col in range(3):
            key = PANEL_KEYS[row][col]
            x, y = _panel_origin(row, col)
            _panel_frame(parts, x, y, key)
            top = y + 20
            floor = y + _PANEL_H - 22
            span = floor - top
            values = {m: [float(r[key]) for r in mode_reports[m]] for m in names}
            peak = max(max(v) for v in values.values())
            peak = max(peak, 1e-300) * 1.1
            slot = (_PANEL_W - 46) / len(names)
            for i, name in enumerate(names):
                cx = x + 34 + (i + 0.5) * slot
                color = _PALETTE[i % len(_PALETTE)]
                ys = [floor - span * v / peak for v in values[name]]
                parts.append(
                    f'<line x1="{cx:.1f}" y1="{min(ys):.1f}" x2="{cx:.1f}" '
                    f'y2="{max(ys):.1f}" stroke="{color}" stroke-width="1"/>')
                for vy in ys:
                    parts.append(
                        f'<circle cx="{cx:.1f}" cy="{vy:.1f}" r="2.4" '
                        f'fill="{color}"/>')
                mean_y = floor - span * float(np.mean(values[name])) / peak
                parts.append(
                    f'<line x1="{cx - 8:.1f}" y1="{mean_y:.1f}" '
                    f'x2="{cx + 8:.1f}" y2="{mean_y:.1f}" stroke="{color}" '
                    f'stroke-width="2"/>')
    _legend(parts, width, height, names)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
