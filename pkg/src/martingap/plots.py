"""Minimal SVG line/scatter charts with the plotted data embedded.

Each figure carries its data as CSV inside ``<metadata>``, so a figure can
be audited (or re-plotted) without any plotting toolchain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .io import csv_text

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Layer:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    style: str = "points"   # "points" or "line"
    color: str | None = None


@dataclass
class Figure:
    title: str
    xlabel: str
    ylabel: str
    logx: bool = False
    logy: bool = False
    layers: list[Layer] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, label, x, y, style="points", color=None) -> "Figure":
        self.layers.append(Layer(label, [float(v) for v in x], [float(v) for v in y], style, color))
        return self

    def _tx(self, v):
        return math.log10(v) if self.logx else v

    def _ty(self, v):
        return math.log10(v) if self.logy else v

    def _usable(self, x, y):
        if not (math.isfinite(x) and math.isfinite(y)):
            return False
        return (x > 0 or not self.logx) and (y > 0 or not self.logy)

    def _bounds(self):
        xs, ys = [], []
        for layer in self.layers:
            for x, y in zip(layer.x, layer.y):
                if self._usable(x, y):
                    xs.append(self._tx(x))
                    ys.append(self._ty(y))
        if not xs:
            return 0.0, 1.0, 0.0, 1.0
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            pad = abs(y0) * 0.1 or 0.5
            y0, y1 = y0 - pad, y1 + pad
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def data_table(self) -> str:
        rows = [(layer.label, x, y) for layer in self.layers for x, y in zip(layer.x, layer.y)]
        return csv_text(("layer", "x", "y"), rows)

    def render(self) -> str:
        x0, x1, y0, y1 = self._bounds()
        pw = WIDTH - MARGIN["left"] - MARGIN["right"]
        ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

        def px(v):
            return MARGIN["left"] + (self._tx(v) - x0) / (x1 - x0) * pw

        def py(v):
            return MARGIN["top"] + ph - (self._ty(v) - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
               f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
               f"<metadata>\n{escape(self.data_table())}</metadata>",
               f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
               f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
               'fill="none" stroke="#444"/>',
               f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
               f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(self.xlabel)}</text>',
               f'<text x="16" y="{MARGIN["top"] + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2})">{escape(self.ylabel)}</text>']
        for i in range(5):
            fx = x0 + (x1 - x0) * i / 4
            fy = y0 + (y1 - y0) * i / 4
            lx = 10**fx if self.logx else fx
            ly = 10**fy if self.logy else fy
            X = MARGIN["left"] + pw * i / 4
            Y = MARGIN["top"] + ph - ph * i / 4
            out.append(f'<text x="{X:.1f}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle">{lx:.3g}</text>')
            out.append(f'<text x="{MARGIN["left"] - 6}" y="{Y + 4:.1f}" text-anchor="end">{ly:.3g}</text>')
        for j, layer in enumerate(self.layers):
            color = layer.color or PALETTE[j % len(PALETTE)]
            pts = [(px(x), py(y)) for x, y in zip(layer.x, layer.y) if self._usable(x, y)]
            if layer.style == "line" and len(pts) > 1:
                path = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            else:
                out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>' for a, b in pts]
            ly = MARGIN["top"] + 14 + 15 * j
            out.append(f'<rect x="{MARGIN["left"] + 10}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
            out.append(f'<text x="{MARGIN["left"] + 25}" y="{ly}">{escape(layer.label)}</text>')
        for j, note in enumerate(self.notes):
            ly = MARGIN["top"] + ph - 8 - 15 * j
            out.append(f'<text x="{MARGIN["left"] + pw - 8}" y="{ly}" text-anchor="end">{escape(note)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path: Path) -> None:
        Path(path).write_text(self.render())
