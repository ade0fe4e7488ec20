import csv
import math

import numpy as np
import pytest

from gestalt_probe.canvas import Polarity, RenderStyle, foreground_mask, read_png
from gestalt_probe.dots import (
    DotConfig,
    EFKind,
    EFSetSpec,
    LINEARITY_DELTA,
    LINEARITY_EPS,
    ORIENTATION_MIN_ANGLE_DEG,
    PROXIMITY_FAR,
    PROXIMITY_NEAR,
    Task,
    collinearity_deviation,
    export_dataset,
    folded_angle_deg,
    gen_ef_sequence,
    gen_sanity_pairs,
    gen_training_dataset,
    point_line_distance,
)


def _oracle_point_line(p, a, b):
    # cross-product formula, written independently of the module helper
    ax, ay = a
    bx, by = b
    px, py = p
    num = abs((bx - ax) * (ay - py) - (by - ay) * (ax - px))
    return num / math.hypot(bx - ax, by - ay)


def test_point_line_distance_matches_cross_product_oracle(rng):
    for _ in range(200):
        p, a, b = rng.uniform(0, 1, (3, 2))
        assert point_line_distance(p, a, b) == pytest.approx(_oracle_point_line(p, a, b))


def test_dot_config_rejects_overlap():
    with pytest.raises(ValueError, match="overlap"):
        DotConfig(((0.5, 0.5), (0.5, 0.5 + 0.01)), radius=0.02)


def test_dot_config_max_three():
    with pytest.raises(ValueError):
        DotConfig(((0.1, 0.1), (0.3, 0.3), (0.5, 0.5), (0.7, 0.7)))


# -- relational sequences -----------------------------------------------------

def test_proximity_constraints_hold_over_seeds():
    for seed in range(100):
        seq = gen_ef_sequence(EFSetSpec(kind=EFKind.PROXIMITY, seed=seed))
        (a, b), (c,) = seq.base_dots, seq.context_dots
        assert math.dist(a, c) <= PROXIMITY_NEAR + 1e-12
        assert math.dist(b, c) >= PROXIMITY_FAR - 1e-12


def test_orientation_equidistance_and_angle():
    for seed in range(100):
        seq = gen_ef_sequence(EFSetSpec(kind=EFKind.ORIENTATION, seed=seed))
        (a, b), (c,) = seq.base_dots, seq.context_dots
        assert abs(math.dist(a, c) - math.dist(b, c)) <= 1.0 / 224 + 1e-12
        ang_a = math.degrees(math.atan2(c[1] - a[1], c[0] - a[0]))
        ang_b = math.degrees(math.atan2(c[1] - b[1], c[0] - b[0]))
        diff = abs(ang_a - ang_b) % 360
        assert min(diff, 360 - diff) >= ORIENTATION_MIN_ANGLE_DEG - 1e-9


def test_linearity_deviations_against_geometric_oracle():
    # collinear in image a within eps; deviation in image b at least delta
    for seed in range(100):
        seq = gen_ef_sequence(EFSetSpec(kind=EFKind.LINEARITY, seed=seed))
        (a, b), (c, d) = seq.base_dots, seq.context_dots
        assert collinearity_deviation(a, c, d) <= LINEARITY_EPS
        assert collinearity_deviation(b, c, d) >= LINEARITY_DELTA
        # oracle recomputation: outer pair is the max-distance pair
        pts = [b, c, d]
        dists = [(math.dist(pts[i], pts[j]), i, j) for i in range(3) for j in range(i + 1, 3)]
        _, i, j = max(dists)
        k = ({0, 1, 2} - {i, j}).pop()
        assert _oracle_point_line(pts[k], pts[i], pts[j]) >= LINEARITY_DELTA - 1e-12


def test_composite_minus_base_mask_identical_across_images():
    for kind in (EFKind.PROXIMITY, EFKind.ORIENTATION, EFKind.LINEARITY):
        for seed in range(25):
            seq = gen_ef_sequence(EFSetSpec(kind=kind, seed=seed), size=224)
            ctx_a = foreground_mask(seq.composite.glyph_a, 224) & ~foreground_mask(
                seq.base.glyph_a, 224
            )
            ctx_b = foreground_mask(seq.composite.glyph_b, 224) & ~foreground_mask(
                seq.base.glyph_b, 224
            )
            assert np.array_equal(ctx_a, ctx_b)


def test_sequence_deterministic_and_seed_sensitive():
    s1 = gen_ef_sequence(EFSetSpec(kind=EFKind.PROXIMITY, seed=5))
    s2 = gen_ef_sequence(EFSetSpec(kind=EFKind.PROXIMITY, seed=5))
    s3 = gen_ef_sequence(EFSetSpec(kind=EFKind.PROXIMITY, seed=6))
    assert s1.base_dots == s2.base_dots and s1.context_dots == s2.context_dots
    assert s1.base_dots != s3.base_dots
    assert s1.base.image_a.same_pixels(s2.base.image_a)


def test_sanity_kind_rejected_by_sequence_generator():
    with pytest.raises(ValueError):
        gen_ef_sequence(EFSetSpec(kind=EFKind.SANITY, seed=0))


# -- sanity pairs -------------------------------------------------------------

def test_sanity_empty_canvases_all_zero_on_black():
    pairs = gen_sanity_pairs(RenderStyle(Polarity.WHITE_ON_BLACK), seed=3, size=64)
    assert pairs.empty_pair.image_a.pixels.max() == 0
    assert pairs.empty_pair.image_b.pixels.max() == 0
    assert pairs.empty_vs_dot.image_a.pixels.max() == 0
    assert pairs.empty_vs_dot.image_b.pixels.max() == 255


def test_sanity_random_backgrounds_differ():
    pairs = gen_sanity_pairs(RenderStyle(Polarity.BLACK_ON_RANDOM), seed=3, size=64)
    assert not pairs.empty_pair.image_a.same_pixels(pairs.empty_pair.image_b)


def test_dot_canvas_foreground_area_matches_disc():
    # rasterized disc pixel count within perimeter-sized slack of pi r^2
    pairs = gen_sanity_pairs(RenderStyle(Polarity.WHITE_ON_BLACK), seed=9, size=224)
    count = int((pairs.empty_vs_dot.image_b.pixels[:, :, 0] == 255).sum())
    r = 4.0
    area, perim = math.pi * r * r, 2 * math.pi * r
    assert area - perim <= count <= area + perim


# -- banded datasets ----------------------------------------------------------

def test_proximity_dataset_bands_and_balance():
    train, test = gen_training_dataset(Task.PROXIMITY3, 60, 30, seed=4, size=224)
    assert train.class_counts() == {"close": 20, "medium": 20, "large": 20}
    assert test.class_counts() == {"close": 10, "medium": 10, "large": 10}
    for s in train.samples + test.samples:
        d = s.param_value
        if s.label == "close":
            assert d < 50.0
        elif s.label == "medium":
            assert 60.0 <= d <= 110.0
        else:
            assert d > 120.0


def test_proximity_param_matches_geometry():
    train, _ = gen_training_dataset(Task.PROXIMITY3, 12, 3, seed=8, size=224)
    for s in train.samples:
        mask = s.canvas.pixels[:, :, 0] == 255
        assert mask.sum() > 0  # two discs rendered


def test_orientation_dataset_bands():
    train, _ = gen_training_dataset(Task.ORIENTATION3, 60, 3, seed=4, size=224)
    for s in train.samples:
        ang = s.param_value
        if s.label == "low":
            assert 0.0 <= ang <= 25.0
        elif s.label == "mid":
            assert 35.0 <= ang <= 60.0
        else:
            assert 75.0 <= ang <= 90.0


def test_orientation_gap_bands_never_sampled():
    train, test = gen_training_dataset(Task.ORIENTATION3, 300, 30, seed=10, size=224)
    for s in train.samples + test.samples:
        assert not (25.0 < s.param_value < 35.0)
        assert not (60.0 < s.param_value < 75.0)


def test_linearity_dataset_deviation_margins():
    train, _ = gen_training_dataset(Task.LINEARITY2, 200, 2, seed=6, size=224)
    eps_px = LINEARITY_EPS * 224
    delta_px = LINEARITY_DELTA * 224
    for s in train.samples:
        if s.label == "collinear":
            assert s.param_value <= eps_px + 1e-9
        else:
            assert s.param_value >= delta_px - 1e-9


def test_dataset_divisibility_enforced():
    with pytest.raises(ValueError, match="divisible"):
        gen_training_dataset(Task.PROXIMITY3, 100, 30, seed=0)


def test_dataset_deterministic():
    a, _ = gen_training_dataset(Task.PROXIMITY3, 12, 3, seed=77, size=64)
    b, _ = gen_training_dataset(Task.PROXIMITY3, 12, 3, seed=77, size=64)
    for sa, sb in zip(a.samples, b.samples):
        assert sa.label == sb.label and sa.canvas.same_pixels(sb.canvas)


def test_to_arrays_shapes_and_labels():
    train, _ = gen_training_dataset(Task.LINEARITY2, 8, 2, seed=1, size=64)
    x, y = train.to_arrays()
    assert x.shape == (8, 1, 64, 64) and x.dtype == np.float32
    assert set(y.tolist()) == {0, 1}


def test_export_dataset_writes_manifest_and_pngs(tmp_path):
    train, _ = gen_training_dataset(Task.PROXIMITY3, 6, 3, seed=2, size=64)
    manifest = export_dataset(train, tmp_path / "ds")
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert set(rows[0]) == {"filename", "label", "param_value"}
    img = read_png(tmp_path / "ds" / rows[0]["filename"])
    assert img.size == 64


def test_folded_angle_helper():
    assert folded_angle_deg((0, 0), (1, 0)) == pytest.approx(0.0)
    assert folded_angle_deg((0, 0), (0, 1)) == pytest.approx(90.0)
    assert folded_angle_deg((0, 0), (1, 1)) == pytest.approx(45.0)
    assert folded_angle_deg((1, 1), (0, 0)) == pytest.approx(45.0)


def test_infeasible_placement_reports_error():
    # a dot radius this large leaves no room for the near/far constraints
    with pytest.raises(Exception, match="infeasible EF placement"):
        gen_ef_sequence(EFSetSpec(kind=EFKind.PROXIMITY, seed=0, dot_radius=0.3))
