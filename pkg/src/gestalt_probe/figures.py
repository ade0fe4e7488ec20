"""SVG report figures rendered straight from the result CSVs.

Three figure families per result table: a bar chart of the configural
effect per set/relational feature at the final layer (with standard-error
whiskers), a human-vs-network scatter with quadrant lines at zero (upper
right / lower left quadrants mean agreement), and a per-layer line plot of
the effect against probe depth. SVG is built by hand: byte-stable output,
no raster toolkit, and elements carry data- attributes so tests can assert
geometry directly.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

from .pomerantz import load_human_ce

REQUIRED_COLUMNS = ["model", "probe", "set_or_ef", "base_sim", "composite_sim",
                    "ce", "stderr", "n"]

PALETTE = ("#3b6fb6", "#d1603d", "#5a9e6f", "#8e6fb6", "#b6a13b", "#6fb3b6",
           "#b63b6f", "#7f7f7f")


class PlotError(ValueError):
    pass


class _SVG:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts: list[str] = []

    def add(self, tag: str, text: str | None = None, **attrs) -> None:
        rendered = " ".join(
            f'{k.replace("_", "-")}="{v}"' for k, v in attrs.items()
        )
        if text is None:
            self.parts.append(f"<{tag} {rendered}/>")
        else:
            self.parts.append(f"<{tag} {rendered}>{text}</{tag}>")

    def line(self, x1, y1, x2, y2, stroke="#444", width=1.0, **extra):
        self.add("line", x1=f"{x1:.2f}", y1=f"{y1:.2f}", x2=f"{x2:.2f}",
                 y2=f"{y2:.2f}", stroke=stroke, stroke_width=width, **extra)

    def text(self, x, y, s, size=11, anchor="middle", **extra):
        self.add("text", text=s, x=f"{x:.2f}", y=f"{y:.2f}", font_size=size,
                 text_anchor=anchor, font_family="sans-serif", **extra)

    def to_string(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>\n'
            f"{body}\n</svg>\n"
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_string())


@dataclass
class _Scale:
    lo: float
    hi: float
    px_lo: float
    px_hi: float

    def __call__(self, v: float) -> float:
        span = self.hi - self.lo or 1.0
        return self.px_lo + (v - self.lo) / span * (self.px_hi - self.px_lo)


def _pad_range(values, frac=0.1):
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    pad = (hi - lo) * frac
    return lo - pad, hi + pad


@dataclass
class ResultTable:
    path: str
    model: str
    probes: list[str]          # first-appearance order
    sets: list[str]            # first-appearance order
    ce: dict[tuple[str, str], float]       # (set_or_ef, probe) -> ce
    stderr: dict[tuple[str, str], float]


def _read_result_csv(path: str) -> ResultTable:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in cols]
        if missing:
            raise PlotError(f"{path}: missing columns {missing}")
        probes: list[str] = []
        sets: list[str] = []
        ce: dict[tuple[str, str], float] = {}
        stderr: dict[tuple[str, str], float] = {}
        model = ""
        for row in reader:
            model = row["model"]
            p, s = row["probe"], row["set_or_ef"]
            if p not in probes:
                probes.append(p)
            if s not in sets:
                sets.append(s)
            try:
                float(row["base_sim"]), float(row["composite_sim"]), int(row["n"])
                ce[(s, p)] = float(row["ce"])
                stderr[(s, p)] = float(row["stderr"])
            except ValueError as exc:
                raise PlotError(f"{path}: non-numeric value ({exc})") from None
    if not ce:
        raise PlotError(f"{path}: no data rows")
    return ResultTable(path=path, model=model, probes=probes, sets=sets,
                       ce=ce, stderr=stderr)


def _final_probe(table: ResultTable, probe_kinds: dict[str, str]) -> str:
    for name, kind in probe_kinds.items():
        if kind == "last_fc" and name in table.probes:
            return name
    return table.probes[-1]


def bar_chart(table: ResultTable, probe: str, path) -> None:
    """Effect per set/feature at one probe, with stderr whiskers."""
    width, height = max(420, 60 + 34 * len(table.sets)), 300
    svg = _SVG(width, height)
    values = [table.ce[(s, probe)] for s in table.sets]
    errs = [table.stderr[(s, probe)] for s in table.sets]
    lo, hi = _pad_range([v - e for v, e in zip(values, errs)]
                        + [v + e for v, e in zip(values, errs)] + [0.0])
    y = _Scale(lo, hi, height - 40, 20)
    x0, x1 = 60, width - 20
    step = (x1 - x0) / max(1, len(table.sets))
    svg.text(width / 2, 14, f"{table.model} / {probe}: configural effect", size=12)
    svg.line(x0, y(0.0), x1, y(0.0), stroke="#222", width=1.2, **{"class": "zero"})
    for i, (s, v, e) in enumerate(zip(table.sets, values, errs)):
        cx = x0 + (i + 0.5) * step
        bw = step * 0.6
        top, bot = y(max(0.0, v)), y(min(0.0, v))
        svg.add("rect", x=f"{cx - bw / 2:.2f}", y=f"{top:.2f}",
                width=f"{bw:.2f}", height=f"{max(0.1, bot - top):.2f}",
                fill=PALETTE[i % len(PALETTE)], **{"class": "bar", "data-ce": f"{v:.6g}",
                                                   "data-set": s})
        svg.line(cx, y(v - e), cx, y(v + e), stroke="#222", width=1.0)
        svg.text(cx, height - 24, s.replace("set_", ""), size=9)
    svg.text(14, y(0.0), "0", size=9, anchor="end")
    svg.text(x0 - 6, y(hi), f"{hi:.3g}", size=9, anchor="end")
    svg.text(x0 - 6, y(lo), f"{lo:.3g}", size=9, anchor="end")
    svg.save(path)


def scatter_human_vs_network(table: ResultTable, probe: str, human: dict[str, float],
                             path) -> None:
    """Agreement scatter with quadrant lines at zero."""
    shared = [s for s in table.sets if s in human]
    if not shared:
        raise PlotError(f"{table.path}: no sets overlap the human data")
    xs = [human[s] for s in shared]
    ys = [table.ce[(s, probe)] for s in shared]
    width, height = 420, 420
    svg = _SVG(width, height)
    xlo, xhi = _pad_range(xs + [0.0])
    ylo, yhi = _pad_range(ys + [0.0])
    sx = _Scale(xlo, xhi, 50, width - 20)
    sy = _Scale(ylo, yhi, height - 50, 20)
    svg.text(width / 2, 14, f"{table.model} / {probe}: human vs network effect", size=12)
    svg.line(sx(0.0), sy(ylo), sx(0.0), sy(yhi), stroke="#888", width=1.0,
             **{"class": "quadrant-x"})
    svg.line(sx(xlo), sy(0.0), sx(xhi), sy(0.0), stroke="#888", width=1.0,
             **{"class": "quadrant-y", "data-zero-y": f"{sy(0.0):.2f}"})
    for s, xv, yv in zip(shared, xs, ys):
        svg.add("circle", cx=f"{sx(xv):.2f}", cy=f"{sy(yv):.2f}", r="4",
                fill="#3b6fb6", fill_opacity="0.8",
                **{"class": "point", "data-set": s, "data-human": f"{xv:.6g}",
                   "data-network": f"{yv:.6g}"})
        svg.text(sx(xv) + 6, sy(yv) - 4, s.replace("set_", ""), size=8, anchor="start")
    svg.text(width / 2, height - 16, "human effect (s)", size=10)
    svg.text(16, height / 2, "network effect", size=10)
    svg.save(path)


def layer_profile(table: ResultTable, path) -> None:
    """Effect against probe depth, one polyline per set/feature."""
    width, height = 520, 320
    svg = _SVG(width, height)
    values = [table.ce[(s, p)] for s in table.sets for p in table.probes]
    lo, hi = _pad_range(values + [0.0])
    sx = _Scale(0, max(1, len(table.probes) - 1), 60, width - 130)
    sy = _Scale(lo, hi, height - 46, 20)
    svg.text(width / 2, 14, f"{table.model}: effect by layer", size=12)
    svg.line(sx(0), sy(0.0), sx(len(table.probes) - 1), sy(0.0), stroke="#222",
             width=1.0, **{"class": "zero"})
    for i, p in enumerate(table.probes):
        svg.text(sx(i), height - 28, p, size=8)
    for si, s in enumerate(table.sets):
        pts = " ".join(
            f"{sx(i):.2f},{sy(table.ce[(s, p)]):.2f}" for i, p in enumerate(table.probes)
        )
        color = PALETTE[si % len(PALETTE)]
        svg.add("polyline", points=pts, fill="none", stroke=color, stroke_width=1.6,
                **{"class": "layer-line", "data-set": s})
        svg.text(width - 124, 24 + 12 * si, s, size=9, anchor="start", fill=color)
    svg.save(path)


def plot(results_dir) -> list[str]:
    """Render figures for every result CSV under results_dir.

    Validates everything before writing anything: an empty directory or a
    malformed CSV produces an error and no partial output.
    """
    results_dir = str(results_dir)
    res_sub = os.path.join(results_dir, "results")
    search_dir = res_sub if os.path.isdir(res_sub) else results_dir
    if not os.path.isdir(search_dir):
        raise PlotError(f"no such results directory: {results_dir}")
    csvs = sorted(
        os.path.join(search_dir, f) for f in os.listdir(search_dir)
        if f.endswith(".csv") and not f.endswith("__correlations.csv")
    )
    if not csvs:
        raise PlotError(f"no result CSVs found in {search_dir}")

    probe_kinds_by_model: dict[str, dict[str, str]] = {}
    manifest_path = os.path.join(results_dir, "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            probe_kinds_by_model = json.load(fh).get("probes", {})

    tables = [_read_result_csv(p) for p in csvs]  # validate all first
    human = {f"set_{r.set_id:02d}": r.human_ce for r in load_human_ce()}

    fig_dir = os.path.join(results_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    written = []
    for table in tables:
        stem = os.path.splitext(os.path.basename(table.path))[0]
        kinds = probe_kinds_by_model.get(table.model, {})
        final = _final_probe(table, kinds)
        bar_path = os.path.join(fig_dir, f"{stem}__bars.svg")
        bar_chart(table, final, bar_path)
        written.append(bar_path)
        layers_path = os.path.join(fig_dir, f"{stem}__layers.svg")
        layer_profile(table, layers_path)
        written.append(layers_path)
        if any(s in human for s in table.sets):
            scatter_path = os.path.join(fig_dir, f"{stem}__scatter.svg")
            scatter_human_vs_network(table, final, human, scatter_path)
            written.append(scatter_path)
    return written
