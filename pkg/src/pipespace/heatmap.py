"""Self-contained SVG heatmaps for labelled square matrices."""

from __future__ import annotations

import os
from xml.sax.saxutils import escape

import numpy as np

from .errors import DataIOError, ValidationError

CELL = 28
LABEL_MARGIN = 96
LEGEND_WIDTH = 18
LOW_RGB = (247, 251, 255)
HIGH_RGB = (8, 48, 107)


def _color(t: float) -> str:
    rgb = [round(lo + (hi - lo) * t) for lo, hi in zip(LOW_RGB, HIGH_RGB)]
    return "#%02x%02x%02x" % tuple(rgb)


def _num(x: float) -> str:
    return f"{x:.6g}"


def render_heatmap(matrix, labels, path=None, vmin=None, vmax=None, fmt="{:.2f}", title="", blocks=None) -> str:
    """Render ``matrix`` as SVG 1.1 and optionally write it to ``path``.

    Colours map linearly from ``vmin`` (light) to ``vmax`` (dark); the
    legend shows both ends.  ``fmt`` annotates each cell (``None`` for no
    text).  ``blocks`` is a list of ``(start, stop)`` index ranges outlined
    on the diagonal.  Output bytes depend only on the arguments.
    """
    m = np.asarray(matrix, dtype=np.float64)
    labels = [str(x) for x in labels]
    n = len(labels)
    if m.shape != (n, n):
        raise ValidationError(f"heatmap needs a square matrix matching {n} labels, got {m.shape}")
    lo = float(np.min(m)) if vmin is None else float(vmin)
    hi = float(np.max(m)) if vmax is None else float(vmax)
    span = hi - lo if hi > lo else 1.0

    top = LABEL_MARGIN + (24 if title else 0)
    grid_w = n * CELL
    width = LABEL_MARGIN + grid_w + 24 + LEGEND_WIDTH + 64
    height = top + grid_w + 16
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif">',
        "<defs>",
        '<linearGradient id="scale" x1="0" y1="1" x2="0" y2="0">',
        f'<stop offset="0" stop-color="{_color(0.0)}"/>',
        f'<stop offset="1" stop-color="{_color(1.0)}"/>',
        "</linearGradient>",
        "</defs>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{LABEL_MARGIN}" y="18" font-size="14">{escape(title)}</text>')

    for i, label in enumerate(labels):
        y = top + i * CELL + CELL / 2
        out.append(f'<text x="{LABEL_MARGIN - 4}" y="{_num(y)}" font-size="10" text-anchor="end" '
                   f'dominant-baseline="middle">{escape(label)}</text>')
        x = LABEL_MARGIN + i * CELL + CELL / 2
        out.append(f'<text x="{_num(x)}" y="{top - 4}" font-size="10" '
                   f'transform="rotate(-60 {_num(x)} {top - 4})">{escape(label)}</text>')

    for i in range(n):
        for j in range(n):
            t = min(1.0, max(0.0, (m[i, j] - lo) / span))
            x = LABEL_MARGIN + j * CELL
            y = top + i * CELL
            out.append(f'<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'fill="{_color(t)}"><title>{escape(labels[i])} / {escape(labels[j])}: '
                       f'{_num(m[i, j])}</title></rect>')
            if fmt:
                ink = "#ffffff" if t > 0.6 else "#000000"
                out.append(f'<text x="{x + CELL // 2}" y="{y + CELL // 2}" font-size="8" fill="{ink}" '
                           f'text-anchor="middle" dominant-baseline="middle">{escape(fmt.format(m[i, j]))}</text>')

    for start, stop in blocks or ():
        x = LABEL_MARGIN + start * CELL
        y = top + start * CELL
        size = (stop - start) * CELL
        out.append(f'<rect x="{x}" y="{y}" width="{size}" height="{size}" fill="none" '
                   f'stroke="#d62728" stroke-width="2"/>')

    lx = LABEL_MARGIN + grid_w + 24
    out.append(f'<rect x="{lx}" y="{top}" width="{LEGEND_WIDTH}" height="{grid_w}" '
               f'fill="url(#scale)" stroke="#000000" stroke-width="0.5"/>')
    out.append(f'<text class="legend-max" x="{lx + LEGEND_WIDTH + 4}" y="{top + 8}" font-size="10">{_num(hi)}</text>')
    out.append(f'<text class="legend-min" x="{lx + LEGEND_WIDTH + 4}" y="{top + grid_w}" font-size="10">{_num(lo)}</text>')
    out.append("</svg>")
    svg = "\n".join(out) + "\n"

    if path is not None:
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(svg)
        except OSError as exc:
            raise DataIOError(f"cannot write heatmap {os.fspath(path)!r}: {exc.strerror or exc}") from exc
    return svg


def partition_blocks(assignment_in_order) -> list:
    """Contiguous ``(start, stop)`` runs of equal community labels."""
    blocks = []
    start = 0
    labels = list(assignment_in_order)
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            blocks.append((start, i))
            start = i
    return blocks
