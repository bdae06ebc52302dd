"""Small deterministic SVG charts. Each figure embeds its plotted data as JSON
inside ``<metadata>`` so the file is self-contained."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape, unescape

import numpy as np

from ._io import jsonable

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _n(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _tick_label(v: float) -> str:
    return f"{v:.4g}"


@dataclass
class Panel:
    """One set of axes. Coordinates are data units; the panel maps them to pixels."""

    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: float = 360
    height: float = 260
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None
    items: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def line(self, x, y, color=PALETTE[0], width=1.5, opacity=1.0, label=None, markers=False, dash=None):
        self.items.append(("line", np.asarray(x, float), np.asarray(y, float),
                           dict(color=color, width=width, opacity=opacity, label=label, markers=markers, dash=dash)))

    def points(self, x, y, color=PALETTE[0], r=2.0, opacity=0.6, label=None):
        self.items.append(("points", np.asarray(x, float), np.asarray(y, float),
                           dict(color=color, r=r, opacity=opacity, label=label)))

    def vline(self, x, color="#555555", label=None):
        self.items.append(("vline", float(x), None, dict(color=color, label=label)))

    def _limits(self):
        xs, ys = [], []
        for kind, x, y, _ in self.items:
            if kind == "vline":
                xs.append(np.array([x]))
            else:
                xs.append(x[np.isfinite(x)])
                ys.append(y[np.isfinite(y)])
        def span(parts, fixed):
            if fixed is not None:
                return fixed
            v = np.concatenate(parts) if parts else np.zeros(0)
            if v.size == 0:
                return (0.0, 1.0)
            lo, hi = float(v.min()), float(v.max())
            if hi == lo:
                lo, hi = lo - 0.5, hi + 0.5
            pad = 0.04 * (hi - lo)
            return (lo - pad, hi + pad)
        return span(xs, self.xlim), span(ys, self.ylim)

    def render(self, ox: float, oy: float) -> list[str]:
        ml, mr, mt, mb = 56, 12, 26, 40
        pw, ph = self.width - ml - mr, self.height - mt - mb
        (x0, x1), (y0, y1) = self._limits()
        sx = lambda v: ox + ml + (v - x0) / (x1 - x0) * pw  # noqa: E731
        sy = lambda v: oy + mt + ph - (v - y0) / (y1 - y0) * ph  # noqa: E731
        out = [f'<g class="panel">',
               f'<rect x="{_n(ox + ml)}" y="{_n(oy + mt)}" width="{_n(pw)}" height="{_n(ph)}" '
               f'fill="none" stroke="#333333" stroke-width="1"/>']
        if self.title:
            out.append(f'<text x="{_n(ox + ml + pw / 2)}" y="{_n(oy + 16)}" text-anchor="middle" '
                       f'font-size="12">{escape(self.title)}</text>')
        for t in nice_ticks(x0, x1):
            out.append(f'<line x1="{_n(sx(t))}" y1="{_n(oy + mt + ph)}" x2="{_n(sx(t))}" '
                       f'y2="{_n(oy + mt + ph + 4)}" stroke="#333333"/>')
            out.append(f'<text x="{_n(sx(t))}" y="{_n(oy + mt + ph + 15)}" text-anchor="middle" '
                       f'font-size="9">{_tick_label(t)}</text>')
        for t in nice_ticks(y0, y1):
            out.append(f'<line x1="{_n(ox + ml - 4)}" y1="{_n(sy(t))}" x2="{_n(ox + ml)}" '
                       f'y2="{_n(sy(t))}" stroke="#333333"/>')
            out.append(f'<text x="{_n(ox + ml - 6)}" y="{_n(sy(t) + 3)}" text-anchor="end" '
                       f'font-size="9">{_tick_label(t)}</text>')
        if self.xlabel:
            out.append(f'<text x="{_n(ox + ml + pw / 2)}" y="{_n(oy + self.height - 6)}" '
                       f'text-anchor="middle" font-size="10">{escape(self.xlabel)}</text>')
        if self.ylabel:
            cx, cy = ox + 12, oy + mt + ph / 2
            out.append(f'<text x="{_n(cx)}" y="{_n(cy)}" text-anchor="middle" font-size="10" '
                       f'transform="rotate(-90 {_n(cx)} {_n(cy)})">{escape(self.ylabel)}</text>')
        legend = []
        for kind, x, y, st in self.items:
            if kind == "line":
                ok = np.isfinite(x) & np.isfinite(y)
                pts = " ".join(f"{_n(sx(a))},{_n(sy(b))}" for a, b in zip(x[ok], y[ok]))
                dash = f' stroke-dasharray="{st["dash"]}"' if st["dash"] else ""
                op = f' stroke-opacity="{st["opacity"]:.3g}"' if st["opacity"] < 1 else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{st["color"]}" '
                           f'stroke-width="{st["width"]:.3g}"{op}{dash}/>')
                if st["markers"]:
                    out.extend(f'<circle cx="{_n(sx(a))}" cy="{_n(sy(b))}" r="2.5" fill="{st["color"]}"/>'
                               for a, b in zip(x[ok], y[ok]))
            elif kind == "points":
                ok = np.isfinite(x) & np.isfinite(y)
                out.append(f'<g fill="{st["color"]}" fill-opacity="{st["opacity"]:.3g}">')
                out.extend(f'<circle cx="{_n(sx(a))}" cy="{_n(sy(b))}" r="{st["r"]:.3g}"/>'
                           for a, b in zip(x[ok], y[ok]))
                out.append("</g>")
            else:
                out.append(f'<line x1="{_n(sx(x))}" y1="{_n(oy + mt)}" x2="{_n(sx(x))}" '
                           f'y2="{_n(oy + mt + ph)}" stroke="{st["color"]}" stroke-dasharray="4 3"/>')
            if st.get("label"):
                legend.append((st["label"], st["color"]))
        for i, (label, color) in enumerate(legend):
            ly = oy + mt + 12 + 13 * i
            out.append(f'<rect x="{_n(ox + ml + pw - 110)}" y="{_n(ly - 7)}" width="8" height="8" fill="{color}"/>')
            out.append(f'<text x="{_n(ox + ml + pw - 98)}" y="{_n(ly)}" font-size="9">{escape(label)}</text>')
        out.append("</g>")
        return out


def figure(panels: list[Panel], path: str | Path, title: str = "", columns: int = 3, data=None) -> None:
    """Lay panels out on a grid and write the SVG file."""
    columns = max(1, min(columns, len(panels)))
    rows = math.ceil(len(panels) / columns)
    pw = max(p.width for p in panels)
    ph = max(p.height for p in panels)
    top = 28 if title else 0
    W, H = pw * columns, ph * rows + top
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_n(W)}" height="{_n(H)}" '
            f'viewBox="0 0 {_n(W)} {_n(H)}" font-family="sans-serif">']
    payload = data if data is not None else {p.title or f"panel{i}": p.data for i, p in enumerate(panels)}
    body.append("<metadata>" + escape(json.dumps(jsonable(payload), sort_keys=True)) + "</metadata>")
    body.append(f'<rect width="{_n(W)}" height="{_n(H)}" fill="#ffffff"/>')
    if title:
        body.append(f'<text x="{_n(W / 2)}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for i, p in enumerate(panels):
        body.extend(p.render((i % columns) * pw, top + (i // columns) * ph))
    body.append("</svg>")
    Path(path).write_text("\n".join(body) + "\n", encoding="utf-8")


def read_metadata(path: str | Path):
    """Recover the data embedded by :func:`figure`."""
    text = Path(path).read_text(encoding="utf-8")
    m = re.search(r"<metadata>(.*?)</metadata>", text, re.S)
    if m is None:
        raise ValueError(f"{path}: no embedded data")
    return json.loads(unescape(m.group(1)))
