"""Catalog of the 17 discrimination sets and the bundled human timing data.

Each set is a base glyph pair (two images differing in one diagnostic
element), a context glyph, and the two composites formed by primitive-list
union of base and context. The context is identical in both composites by
construction, so any discriminability change between base and composite pair
is attributable to relations between base element and context.

Sets are numbered by rank of the human configural effect, descending: sets
1-5 are the strong facilitation sets (human effect 0.7-1.38 s), the tail
turns negative, with 13 and 16 among the strongest interference sets. The
glyph geometry is a vector reconstruction of the classic line-drawing
stimuli (diagonals with corner contexts, parenthesis pairs, arc closures,
and assorted line/dot configurations); exact coordinates of the originals
are not published, so the catalog documents its own geometry and the test
suite pins the structural invariants instead of pixel positions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

from .canvas import DEFAULT_DOT_RADIUS, DEFAULT_STROKE_WIDTH, Dot, Glyph, Polyline

N_SETS = 17


class HumanDataError(ValueError):
    """Raised when a human-effect data file fails validation."""


@dataclass(frozen=True)
class StimulusSet:
    set_id: int
    base_glyphs: tuple[Glyph, Glyph]
    context_glyph: Glyph
    composite_glyphs: tuple[Glyph, Glyph]


@dataclass(frozen=True)
class HumanCERecord:
    set_id: int
    human_ce: float  # seconds, base RT minus composite RT
    source: str


def _line(*points, width=DEFAULT_STROKE_WIDTH) -> Polyline:
    return Polyline(vertices=tuple(points), stroke_width=width)


def _arc(cx, cy, r, deg_start, deg_end, n=16, width=DEFAULT_STROKE_WIDTH) -> Polyline:
    import math

    pts = []
    for i in range(n + 1):
        a = math.radians(deg_start + (deg_end - deg_start) * i / n)
        pts.append((cx + r * math.cos(a), cy + r * math.sin(a)))
    return Polyline(vertices=tuple(pts), stroke_width=width)


def _dot(x, y, r=DEFAULT_DOT_RADIUS) -> Dot:
    return Dot(center=(x, y), radius=r)


def _build_catalog() -> dict[int, tuple[tuple[Glyph, Glyph], Glyph]]:
    """(base_a, base_b), context for each set id."""
    cat: dict[int, tuple[tuple[Glyph, Glyph], Glyph]] = {}

    # 1: opposite diagonals; corner context closes a triangle vs an arrow.
    diag_a = Glyph([_line((0.38, 0.38), (0.62, 0.62))])
    diag_b = Glyph([_line((0.62, 0.38), (0.38, 0.62))])
    corner = Glyph([_line((0.38, 0.38), (0.38, 0.62), (0.62, 0.62))])
    cat[1] = ((diag_a, diag_b), corner)

    # 2: left vs right parenthesis; a left paren context yields (( vs ().
    paren_l = Glyph([_arc(0.58, 0.50, 0.16, 120, 240)])
    paren_r = Glyph([_arc(0.42, 0.50, 0.16, -60, 60)])
    cat[2] = ((paren_l, paren_r), Glyph([_arc(0.30, 0.50, 0.16, 120, 240)]))

    # 3: half-arc orientations; the context half-arc closes a circle for one.
    arc_up = Glyph([_arc(0.50, 0.50, 0.18, 180, 360)])
    arc_dn = Glyph([_arc(0.50, 0.26, 0.18, 0, 180)])
    cat[3] = ((arc_up, arc_dn), Glyph([_arc(0.50, 0.50, 0.18, 0, 180)]))

    # 4: two closed shapes; context underline keeps both as shape-on-line.
    tri = Glyph([_line((0.50, 0.34), (0.66, 0.60), (0.34, 0.60), (0.50, 0.34))])
    sq = Glyph([_line((0.36, 0.36), (0.64, 0.36), (0.64, 0.60), (0.36, 0.60), (0.36, 0.36))])
    cat[4] = ((tri, sq), Glyph([_line((0.28, 0.70), (0.72, 0.70))]))

    # 5: two non-shape diagonal strokes; orthogonal hatch context.
    seg_a = Glyph([_line((0.34, 0.42), (0.58, 0.30))])
    seg_b = Glyph([_line((0.34, 0.30), (0.58, 0.42))])
    cat[5] = ((seg_a, seg_b), Glyph([_line((0.42, 0.56), (0.66, 0.68))]))

    # 6: vertical vs horizontal bar with an L context forming T vs corner.
    vbar = Glyph([_line((0.50, 0.34), (0.50, 0.60))])
    hbar = Glyph([_line((0.37, 0.47), (0.63, 0.47))])
    cat[6] = ((vbar, hbar), Glyph([_line((0.37, 0.66), (0.63, 0.66))]))

    # 7: dot high vs dot low; bracket context below.
    cat[7] = (
        (Glyph([_dot(0.50, 0.36)]), Glyph([_dot(0.50, 0.58)])),
        Glyph([_line((0.36, 0.68), (0.36, 0.74), (0.64, 0.74), (0.64, 0.68))]),
    )

    # 8: short vs long stroke; flanking verticals.
    cat[8] = (
        (Glyph([_line((0.42, 0.50), (0.58, 0.50))]), Glyph([_line((0.34, 0.50), (0.66, 0.50))])),
        Glyph([_line((0.28, 0.38), (0.28, 0.62)), _line((0.72, 0.38), (0.72, 0.62))]),
    )

    # 9: diagonal pair again but with a parallel-diagonal context
    # (parallelism vs crossing, weaker than closure).
    cat[9] = ((diag_a, diag_b), Glyph([_line((0.30, 0.46), (0.54, 0.70))]))

    # 10: dot left vs right; single reference dot context.
    cat[10] = (
        (Glyph([_dot(0.38, 0.50)]), Glyph([_dot(0.62, 0.50)])),
        Glyph([_dot(0.50, 0.30)]),
    )

    # 11: tilted stroke orientations with a vertical context stroke.
    cat[11] = (
        (Glyph([_line((0.42, 0.58), (0.58, 0.38))]), Glyph([_line((0.42, 0.38), (0.58, 0.58))])),
        Glyph([_line((0.50, 0.64), (0.50, 0.82))]),
    )

    # 12: curve opening up vs down; horizontal context through the middle.
    cat[12] = (
        (Glyph([_arc(0.50, 0.56, 0.15, 200, 340)]), Glyph([_arc(0.50, 0.44, 0.15, 20, 160)])),
        Glyph([_line((0.32, 0.50), (0.68, 0.50))]),
    )

    # 13: strong interference: dense cross-hatch context swamps a small
    # positional difference between two dots.
    cat[13] = (
        (Glyph([_dot(0.46, 0.50)]), Glyph([_dot(0.54, 0.50)])),
        Glyph(
            [
                _line((0.34, 0.34), (0.66, 0.66)),
                _line((0.66, 0.34), (0.34, 0.66)),
                _line((0.50, 0.30), (0.50, 0.70)),
                _line((0.30, 0.50), (0.70, 0.50)),
            ]
        ),
    )

    # 14: mirror L vs reversed L; overlapping frame context.
    ell = Glyph([_line((0.42, 0.36), (0.42, 0.60), (0.60, 0.60))])
    ell_r = Glyph([_line((0.58, 0.36), (0.58, 0.60), (0.40, 0.60))])
    cat[14] = ((ell, ell_r), Glyph([_line((0.34, 0.28), (0.66, 0.28))]))

    # 15: dot inside vs outside a region; context box around the center.
    cat[15] = (
        (Glyph([_dot(0.50, 0.48)]), Glyph([_dot(0.50, 0.72)])),
        Glyph([_line((0.38, 0.38), (0.62, 0.38), (0.62, 0.60), (0.38, 0.60), (0.38, 0.38))]),
    )

    # 16: strong interference: parallel clutter lines around tilted strokes.
    cat[16] = (
        (Glyph([_line((0.44, 0.40), (0.56, 0.60))]), Glyph([_line((0.56, 0.40), (0.44, 0.60))])),
        Glyph(
            [
                _line((0.36, 0.40), (0.48, 0.60)),
                _line((0.52, 0.40), (0.64, 0.60)),
                _line((0.40, 0.36), (0.60, 0.36)),
            ]
        ),
    )

    # 17: near-identical curves with a heavy occluding context.
    cat[17] = (
        (Glyph([_arc(0.50, 0.50, 0.14, 150, 260)]), Glyph([_arc(0.50, 0.50, 0.14, 160, 270)])),
        Glyph(
            [
                _line((0.30, 0.30), (0.70, 0.30), (0.70, 0.70), (0.30, 0.70), (0.30, 0.30)),
                _line((0.30, 0.30), (0.70, 0.70)),
            ]
        ),
    )
    return cat


_CATALOG = _build_catalog()


def build_set(set_id: int) -> StimulusSet:
    """Return the glyphs for one catalog set (1..17)."""
    if not isinstance(set_id, int) or not 1 <= set_id <= N_SETS:
        raise ValueError(f"set_id must be in 1..{N_SETS}, got {set_id!r}")
    (base_a, base_b), context = _CATALOG[set_id]
    for g in (base_a, base_b, context):
        g.assert_normalized()
    return StimulusSet(
        set_id=set_id,
        base_glyphs=(base_a, base_b),
        context_glyph=context,
        composite_glyphs=(base_a.union(context), base_b.union(context)),
    )


def all_sets() -> list[StimulusSet]:
    return [build_set(i) for i in range(1, N_SETS + 1)]


def catalog_glyphs() -> dict[str, Glyph]:
    """Flat name -> glyph mapping for JSON catalog export."""
    out: dict[str, Glyph] = {}
    for s in all_sets():
        out[f"set{s.set_id:02d}_base_a"] = s.base_glyphs[0]
        out[f"set{s.set_id:02d}_base_b"] = s.base_glyphs[1]
        out[f"set{s.set_id:02d}_context"] = s.context_glyph
    return out


# ---------------------------------------------------------------------------
# Human configural-effect data
# ---------------------------------------------------------------------------

HUMAN_CE_HEADER = ["set_id", "human_ce_seconds", "source"]


def load_human_ce(path=None) -> list[HumanCERecord]:
    """Parse and validate a human-effect CSV; defaults to the bundled file.

    The file must cover all 17 set ids exactly once with numeric effect
    values. Validation failures name the offending line.
    """
    if path is None:
        ref = resources.files("gestalt_probe.data").joinpath("human_ce.csv")
        with ref.open("r") as fh:
            return _parse_human_ce(fh, "bundled human_ce.csv")
    with open(path, "r", newline="") as fh:
        return _parse_human_ce(fh, str(path))


def _parse_human_ce(fh, label: str) -> list[HumanCERecord]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise HumanDataError(f"{label}: empty file") from None
    if [h.strip() for h in header] != HUMAN_CE_HEADER:
        raise HumanDataError(
            f"{label} line 1: expected header {','.join(HUMAN_CE_HEADER)}, got {','.join(header)}"
        )
    records: dict[int, HumanCERecord] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise HumanDataError(f"{label} line {lineno}: expected 3 fields, got {len(row)}")
        try:
            set_id = int(row[0])
        except ValueError:
            raise HumanDataError(f"{label} line {lineno}: non-integer set_id {row[0]!r}") from None
        try:
            ce = float(row[1])
        except ValueError:
            raise HumanDataError(
                f"{label} line {lineno}: non-numeric effect value {row[1]!r}"
            ) from None
        if not 1 <= set_id <= N_SETS:
            raise HumanDataError(f"{label} line {lineno}: set_id {set_id} out of range 1..{N_SETS}")
        if set_id in records:
            raise HumanDataError(f"{label} line {lineno}: duplicate set_id {set_id}")
        records[set_id] = HumanCERecord(set_id=set_id, human_ce=ce, source=row[2].strip())
    missing = sorted(set(range(1, N_SETS + 1)) - set(records))
    if missing:
        raise HumanDataError(f"{label}: missing set_ids {missing}")
    return [records[i] for i in range(1, N_SETS + 1)]
