"""Procedural dot-pattern stimuli: relational-feature pairs and datasets.

A base pair is a single dot whose location is the only diagnostic feature.
Composites add one or two context dots at identical pixel positions in both
images so that a relation emerges between base dot and context: nearness
(proximity), the angle of the dot pair (orientation), or whether three dots
fall on a line (linearity). A sanity generator produces empty-canvas and
empty-vs-dot pairs for the discriminability floor check, and a dataset
generator emits the banded classification sets used by the learnability
probe (close/medium/large distances, low/mid/high angles, collinear or not).

All pixel-denominated bounds are declared at the 224-px reference canvas and
scale with the rendered size. Generation is pure given (spec, seed).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .canvas import (
    DEFAULT_DOT_RADIUS,
    REFERENCE_SIZE,
    Canvas,
    Dot,
    Glyph,
    RenderStyle,
    StimulusPair,
    render,
    render_background,
    render_pair,
)

MAX_PLACEMENT_ATTEMPTS = 100

# Relational-feature placement bounds, normalized at the 224-px reference.
PROXIMITY_NEAR = 50.0 / REFERENCE_SIZE
PROXIMITY_FAR = 120.0 / REFERENCE_SIZE
ORIENTATION_MIN_ANGLE_DEG = 45.0
EQUIDISTANCE_TOL = 1.0 / REFERENCE_SIZE
LINEARITY_EPS = 1.0 / REFERENCE_SIZE
LINEARITY_DELTA = 15.0 / REFERENCE_SIZE
BASE_MIN_SEPARATION = 60.0 / REFERENCE_SIZE

# Classification band edges (pixels at the reference canvas).
PROXIMITY_BANDS = {"close": (None, 50.0), "medium": (60.0, 110.0), "large": (120.0, None)}
ORIENTATION_BANDS = {"low": (0.0, 25.0), "mid": (35.0, 60.0), "high": (75.0, 90.0)}
LINEARITY_LABELS = ("collinear", "non_collinear")
ORIENTATION_PAIR_DISTANCE = (80.0, 140.0)  # px at reference; angle is the discriminant

# Three-dot task geometry (pixels at the reference canvas). Offsets start
# well above the non-collinearity floor so the two classes are separable at
# the probe's 64-px input; the class check itself stays at the floor.
LINEARITY_SPAN = (100.0, 160.0)
LINEARITY_OFFSET = (40.0, 80.0)

# Dot radius per classification task. The three-dot alignment judgment needs
# fatter dots than the two-dot tasks to survive pooling at small inputs.
TASK_DOT_RADIUS = {
    "proximity3": DEFAULT_DOT_RADIUS,
    "orientation3": DEFAULT_DOT_RADIUS,
    "linearity2": 12.0 / REFERENCE_SIZE,
}


class PlacementError(RuntimeError):
    """Raised when the constraint sampler exhausts its attempt budget."""


class EFKind(str, Enum):
    BASE = "base"
    PROXIMITY = "proximity"
    ORIENTATION = "orientation"
    LINEARITY = "linearity"
    SANITY = "sanity"


@dataclass(frozen=True)
class DotConfig:
    centers: tuple[tuple[float, float], ...]
    radius: float = DEFAULT_DOT_RADIUS

    def __post_init__(self):
        if len(self.centers) > 3:
            raise ValueError("stimulus dot configs hold at most 3 dots")
        pts = np.asarray(self.centers, dtype=np.float64)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.hypot(*(pts[i] - pts[j])) < 2 * self.radius:
                    raise ValueError("dots overlap: pairwise distance < 2*radius")

    def glyph(self) -> Glyph:
        return Glyph(tuple(Dot(center=c, radius=self.radius) for c in self.centers))


@dataclass(frozen=True)
class EFSetSpec:
    kind: EFKind
    seed: int = 0
    style: RenderStyle = RenderStyle()
    dot_radius: float = DEFAULT_DOT_RADIUS


@dataclass(frozen=True)
class EFSequence:
    """One generated sequence: base pair plus relational composite pair."""

    kind: EFKind
    base: StimulusPair
    composite: StimulusPair
    base_dots: tuple[tuple[float, float], tuple[float, float]]
    context_dots: tuple[tuple[float, float], ...]


def point_line_distance(p, a, b) -> float:
    """Perpendicular distance of p from the infinite line through a, b."""
    (px, py), (ax, ay), (bx, by) = p, a, b
    dx, dy = bx - ax, by - ay
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        return math.hypot(px - ax, py - ay)
    return abs(dx * (ay - py) - dy * (ax - px)) / norm


def collinearity_deviation(p1, p2, p3) -> float:
    """Deviation of the middle dot from the line through the outer two.

    The outer pair is the pair with maximum separation; the remaining dot is
    the middle one.
    """
    pts = [p1, p2, p3]
    pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)]
    i, j, k = max(pairs, key=lambda t: math.hypot(
        pts[t[0]][0] - pts[t[1]][0], pts[t[0]][1] - pts[t[1]][1]))
    return point_line_distance(pts[k], pts[i], pts[j])


def _margin(radius: float) -> float:
    return radius + 2.0 / REFERENCE_SIZE


def _sample_point(rng, margin: float) -> tuple[float, float]:
    x, y = rng.uniform(margin, 1.0 - margin, size=2)
    return float(x), float(y)


def _dist(p, q) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _angle_deg(frm, to) -> float:
    return math.degrees(math.atan2(to[1] - frm[1], to[0] - frm[0]))


def _angle_diff_deg(a1, a2) -> float:
    d = abs(a1 - a2) % 360.0
    return min(d, 360.0 - d)


def _sample_base_dots(rng, margin, min_sep):
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        a = _sample_point(rng, margin)
        b = _sample_point(rng, margin)
        if _dist(a, b) >= min_sep:
            return a, b
    raise PlacementError("infeasible EF placement")


def _solve_context(kind: EFKind, rng, radius: float):
    """Sample base dots and context dots satisfying the kind's constraints."""
    margin = _margin(radius)
    min_gap = 2 * radius + 1e-6
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if kind is EFKind.PROXIMITY:
            a, b = _sample_base_dots(rng, margin, PROXIMITY_FAR - PROXIMITY_NEAR + min_gap)
        else:
            a, b = _sample_base_dots(rng, margin, BASE_MIN_SEPARATION)
        if kind is EFKind.BASE:
            return (a, b), ()
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            if kind is EFKind.PROXIMITY:
                # Near the image-a dot, far from the image-b dot.
                r = rng.uniform(min_gap, PROXIMITY_NEAR)
                th = rng.uniform(0.0, 2.0 * math.pi)
                c = (a[0] + r * math.cos(th), a[1] + r * math.sin(th))
                if not _in_bounds(c, margin):
                    continue
                if _dist(b, c) >= PROXIMITY_FAR:
                    return (a, b), (c,)
            elif kind is EFKind.ORIENTATION:
                c = _sample_bisector_point(rng, a, b, margin, min_gap)
                if c is not None:
                    return (a, b), (c,)
            elif kind is EFKind.LINEARITY:
                c = _sample_bisector_point(rng, a, b, margin, min_gap)
                if c is None:
                    continue
                d = _sample_collinear_extension(rng, a, b, c, margin, min_gap)
                if d is not None:
                    return (a, b), (c, d)
            else:
                raise ValueError(f"no context solver for kind {kind}")
        # fall through: new base draw
    raise PlacementError("infeasible EF placement")


def _in_bounds(p, margin) -> bool:
    return margin <= p[0] <= 1.0 - margin and margin <= p[1] <= 1.0 - margin


def _sample_bisector_point(rng, a, b, margin, min_gap):
    # Points on the perpendicular bisector of (a, b) are exactly equidistant;
    # the subtended angle difference shrinks as the point moves away, so cap
    # the offset at the 45-degree bound.
    mx, my = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    dx, dy = b[0] - a[0], b[1] - a[1]
    norm = math.hypot(dx, dy)
    nx, ny = -dy / norm, dx / norm
    half = norm / 2.0
    t_max = half / math.tan(math.radians(ORIENTATION_MIN_ANGLE_DEG / 2.0))
    t = rng.uniform(-t_max, t_max)
    c = (mx + t * nx, my + t * ny)
    if not _in_bounds(c, margin):
        return None
    if _dist(c, a) < min_gap or _dist(c, b) < min_gap:
        return None
    if _angle_diff_deg(_angle_deg(a, c), _angle_deg(b, c)) < ORIENTATION_MIN_ANGLE_DEG:
        return None
    if abs(_dist(a, c) - _dist(b, c)) > EQUIDISTANCE_TOL:
        return None
    return c


def _sample_collinear_extension(rng, a, b, c, margin, min_gap):
    # Extend the a->c line beyond c: {a, c, d} collinear in image a, while
    # {b, c, d} must deviate by at least the non-collinearity margin.
    ux, uy = c[0] - a[0], c[1] - a[1]
    norm = math.hypot(ux, uy)
    if norm == 0.0:
        return None
    ux, uy = ux / norm, uy / norm
    u = rng.uniform(0.5, 1.5) * norm
    d = (c[0] + u * ux, c[1] + u * uy)
    if not _in_bounds(d, margin):
        return None
    if min(_dist(d, a), _dist(d, b), _dist(d, c)) < min_gap:
        return None
    if collinearity_deviation(a, c, d) > LINEARITY_EPS:
        return None
    if collinearity_deviation(b, c, d) < LINEARITY_DELTA:
        return None
    return d


def gen_ef_sequence(spec: EFSetSpec, size: int = REFERENCE_SIZE) -> EFSequence:
    """Generate one base + composite pair for the requested relational kind."""
    if spec.kind in (EFKind.SANITY,):
        raise ValueError("use gen_sanity_pairs for the sanity kind")
    rng = np.random.default_rng(spec.seed)
    (a, b), context = _solve_context(spec.kind, rng, spec.dot_radius)
    base_a = DotConfig((a,), spec.dot_radius).glyph()
    base_b = DotConfig((b,), spec.dot_radius).glyph()
    ctx = Glyph(tuple(Dot(center=c, radius=spec.dot_radius) for c in context))
    style = spec.style.with_seed(spec.seed ^ 0x5EED)
    base = render_pair(base_a, base_b, style, size)
    if len(ctx) == 0:
        composite = base
    else:
        composite = render_pair(base_a.union(ctx), base_b.union(ctx), style, size)
    return EFSequence(kind=spec.kind, base=base, composite=composite,
                      base_dots=(a, b), context_dots=tuple(context))


@dataclass(frozen=True)
class SanityPairs:
    empty_pair: StimulusPair
    empty_vs_dot: StimulusPair
    dot_center: tuple[float, float]


def gen_sanity_pairs(style: RenderStyle, seed: int, size: int = REFERENCE_SIZE,
                     dot_radius: float = DEFAULT_DOT_RADIUS) -> SanityPairs:
    """Empty-canvas pair and empty-vs-single-dot pair.

    Backgrounds use independent noise streams per image, so random-pixel
    empties differ while solid-background empties are identical.
    """
    rng = np.random.default_rng(seed)
    margin = _margin(dot_radius)
    center = _sample_point(rng, margin)

    seeds = np.random.SeedSequence(entropy=int(seed), spawn_key=(7,)).generate_state(4)
    bgs = [Canvas(render_background(style.with_seed(int(s)), size)) for s in seeds[:3]]
    dot_canvas = render(Glyph((Dot(center=center, radius=dot_radius),)),
                        style.with_seed(int(seeds[3])), size)
    empty_pair = StimulusPair(image_a=bgs[0], image_b=bgs[1])
    empty_vs_dot = StimulusPair(image_a=bgs[2], image_b=dot_canvas)
    return SanityPairs(empty_pair=empty_pair, empty_vs_dot=empty_vs_dot, dot_center=center)


# ---------------------------------------------------------------------------
# Banded classification datasets
# ---------------------------------------------------------------------------

class Task(str, Enum):
    PROXIMITY3 = "proximity3"
    ORIENTATION3 = "orientation3"
    LINEARITY2 = "linearity2"


TASK_LABELS = {
    Task.PROXIMITY3: ("close", "medium", "large"),
    Task.ORIENTATION3: ("low", "mid", "high"),
    Task.LINEARITY2: LINEARITY_LABELS,
}


@dataclass(frozen=True)
class LabeledSample:
    canvas: Canvas
    label: str
    param_value: float  # distance px / angle deg / deviation px at render size


@dataclass
class ClassDataset:
    task: Task
    samples: list[LabeledSample] = field(default_factory=list)

    @property
    def labels(self) -> tuple[str, ...]:
        return TASK_LABELS[self.task]

    def class_counts(self) -> dict[str, int]:
        counts = {lab: 0 for lab in self.labels}
        for s in self.samples:
            counts[s.label] += 1
        return counts

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Grayscale inputs (N,1,H,W) float32 in [0,1] and integer labels."""
        xs = np.stack([s.canvas.gray() for s in self.samples])[:, None, :, :]
        idx = {lab: i for i, lab in enumerate(self.labels)}
        ys = np.array([idx[s.label] for s in self.samples], dtype=np.int64)
        return xs.astype(np.float32), ys


def _scale_px(px: float) -> float:
    """Reference-canvas pixels to normalized units.

    Normalized bounds are resolution-independent, which is exactly the
    proportional scaling rule: a 50 px bound at 224 is a ~14.3 px bound at 64.
    """
    return px / REFERENCE_SIZE


def _place_offset_pair(rng, ox, oy, margin):
    """Uniformly place a point pair with fixed offset inside the margins.

    Returns None when no in-bounds placement exists for this offset.
    """
    lim = 1.0 - 2.0 * margin
    if abs(ox) > lim or abs(oy) > lim:
        return None
    ax_lo, ax_hi = max(margin, margin - ox), min(1.0 - margin, 1.0 - margin - ox)
    ay_lo, ay_hi = max(margin, margin - oy), min(1.0 - margin, 1.0 - margin - oy)
    a = (float(rng.uniform(ax_lo, ax_hi)), float(rng.uniform(ay_lo, ay_hi)))
    return a, (a[0] + ox, a[1] + oy)


def _sample_pair_at_distance(rng, d, margin):
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        th = rng.uniform(0.0, 2.0 * math.pi)
        placed = _place_offset_pair(rng, d * math.cos(th), d * math.sin(th), margin)
        if placed is not None:
            a, b = placed
            return a, b, math.degrees(th) % 360.0
    raise PlacementError("infeasible EF placement")


def _sample_pair_at_angle(rng, theta_deg, d, margin):
    # theta is the folded line orientation in [0, 90]; pick a random
    # representative direction among the four equivalents.
    choices = [theta_deg, -theta_deg, 180.0 - theta_deg, theta_deg - 180.0]
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        ang = math.radians(choices[rng.integers(0, 4)])
        placed = _place_offset_pair(rng, d * math.cos(ang), d * math.sin(ang), margin)
        if placed is not None:
            return placed
    raise PlacementError("infeasible EF placement")


def folded_angle_deg(a, b) -> float:
    """Orientation of the segment a-b folded into [0, 90] degrees."""
    ang = math.degrees(math.atan2(b[1] - a[1], b[0] - a[0])) % 180.0
    return min(ang, 180.0 - ang)


def _gen_sample(task: Task, label: str, rng, radius: float, size: int):
    margin = _margin(radius)
    min_gap = 2 * radius + 1e-6
    if task is Task.PROXIMITY3:
        lo, hi = PROXIMITY_BANDS[label]
        lo_n = _scale_px(lo) if lo is not None else min_gap
        max_place = (1.0 - 2 * margin) * math.sqrt(2.0) * 0.9
        hi_n = _scale_px(hi) if hi is not None else max_place
        d = rng.uniform(max(lo_n, min_gap), hi_n)
        a, b, _ = _sample_pair_at_distance(rng, d, margin)
        cfg = DotConfig((a, b), radius)
        param = d * size
    elif task is Task.ORIENTATION3:
        lo, hi = ORIENTATION_BANDS[label]
        theta = rng.uniform(lo, hi)
        d = rng.uniform(*(_scale_px(p) for p in ORIENTATION_PAIR_DISTANCE))
        a, b = _sample_pair_at_angle(rng, theta, d, margin)
        cfg = DotConfig((a, b), radius)
        param = folded_angle_deg(a, b)
    elif task is Task.LINEARITY2:
        d = rng.uniform(*(_scale_px(p) for p in LINEARITY_SPAN))
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            a, b, _ = _sample_pair_at_distance(rng, d, margin)
            frac = rng.uniform(0.3, 0.7)
            mid = (a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1]))
            if label == "non_collinear":
                off = rng.uniform(*(_scale_px(p) for p in LINEARITY_OFFSET))
                off *= 1.0 if rng.integers(0, 2) else -1.0
                ux, uy = b[0] - a[0], b[1] - a[1]
                norm = math.hypot(ux, uy)
                mid = (mid[0] - off * uy / norm, mid[1] + off * ux / norm)
            if not _in_bounds(mid, margin):
                continue
            if _dist(mid, a) < min_gap or _dist(mid, b) < min_gap:
                continue
            dev = collinearity_deviation(a, mid, b)
            if label == "collinear" and dev > LINEARITY_EPS:
                continue
            if label == "non_collinear" and dev < LINEARITY_DELTA:
                continue
            cfg = DotConfig((a, mid, b), radius)
            param = dev * size
            break
        else:
            raise PlacementError("infeasible EF placement")
    else:
        raise ValueError(f"unknown task {task}")
    return cfg, param


def gen_training_dataset(
    task: Task | str,
    n_train: int,
    n_test: int,
    seed: int,
    size: int = REFERENCE_SIZE,
    style: RenderStyle = RenderStyle(),
    dot_radius: float | None = None,
) -> tuple[ClassDataset, ClassDataset]:
    """Balanced train/test datasets with per-class parameter bands.

    Band values are pixels/degrees at the rendered canvas size; the gap
    bands between classes are never sampled. dot_radius defaults per task
    (see TASK_DOT_RADIUS).
    """
    task = Task(task)
    if dot_radius is None:
        dot_radius = TASK_DOT_RADIUS[task.value]
    labels = TASK_LABELS[task]
    for name, n in (("n_train", n_train), ("n_test", n_test)):
        if n % len(labels) != 0:
            raise ValueError(f"{name}={n} not divisible by {len(labels)} classes")

    root = np.random.SeedSequence(entropy=int(seed))
    train_ss, test_ss = root.spawn(2)
    train = _gen_split(task, labels, n_train, train_ss, style, dot_radius, size)
    test = _gen_split(task, labels, n_test, test_ss, style, dot_radius, size)
    return train, test


def _gen_split(task, labels, n, seed_seq, style, radius, size) -> ClassDataset:
    per_class = n // len(labels)
    ds = ClassDataset(task=task)
    child_seeds = seed_seq.generate_state(n * 2).reshape(n, 2)
    i = 0
    for rank in range(per_class):
        for label in labels:
            rng = np.random.default_rng(child_seeds[i])
            cfg, param = _gen_sample(task, label, rng, radius, size)
            img_style = style.with_seed(int(child_seeds[i][0]))
            canvas = render(cfg.glyph(), img_style, size)
            ds.samples.append(LabeledSample(canvas=canvas, label=label, param_value=param))
            i += 1
    return ds


def export_dataset(ds: ClassDataset, out_dir: str) -> str:
    """Write PNGs plus a `filename,label,param_value` manifest; returns the manifest path."""
    from .canvas import write_png

    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label", "param_value"])
        for i, s in enumerate(ds.samples):
            fname = f"{ds.task.value}_{i:05d}_{s.label}.png"
            write_png(s.canvas, os.path.join(out_dir, fname))
            writer.writerow([fname, s.label, f"{s.param_value:.6g}"])
    return manifest
