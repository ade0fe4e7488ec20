import json

import numpy as np
import pytest

from gestalt_probe.canvas import Canvas, Dot, Glyph, Polarity, RenderStyle, render
from gestalt_probe.runner import (
    ActivationVector,
    BundleError,
    BundleMeta,
    ProbeKind,
    ProbeSpec,
    dump_vector,
    forward_with_probes,
    load_model,
    load_vector,
    meta_path_for,
    preprocess,
    probe_canvas,
    resize_bilinear,
)
from gestalt_probe.smallnet import SmallNet, save_bundle


def _meta(**over):
    base = dict(
        input_size=64,
        mean=(0.0, 0.0, 0.0),
        std=(1.0, 1.0, 1.0),
        probes=(
            ProbeSpec("relu1", 0.25, ProbeKind.EARLY),
            ProbeSpec("logits", 1.0, ProbeKind.LAST_FC),
        ),
        total_depth=4,
    )
    base.update(over)
    return BundleMeta(**base)


def test_bundle_loads_with_five_probes(smallnet_handle):
    assert len(smallnet_handle.meta.probes) == 5
    kinds = [p.kind for p in smallnet_handle.meta.probes]
    assert kinds == [ProbeKind.EARLY, ProbeKind.MIDDLE_EARLY, ProbeKind.MIDDLE_LATE,
                     ProbeKind.LAST_CONV, ProbeKind.LAST_FC]


def test_unknown_probe_node_lists_available(tmp_path):
    net = SmallNet(input_size=64, n_classes=3, seed=0)
    path = save_bundle(net, tmp_path / "m.onnx")
    sidecar = meta_path_for(path)
    meta = json.loads(open(sidecar).read())
    meta["probes"][0]["name"] = "not_a_node"
    open(sidecar, "w").write(json.dumps(meta))
    with pytest.raises(BundleError, match="unknown probe node.*available"):
        load_model(path)


def test_missing_sidecar_rejected(tmp_path):
    net = SmallNet(input_size=64, n_classes=3, seed=0)
    path = save_bundle(net, tmp_path / "m.onnx")
    (tmp_path / "m.meta.json").unlink()
    with pytest.raises(BundleError, match="sidecar"):
        load_model(path)


def test_meta_validation_rules():
    with pytest.raises(BundleError, match="last_fc"):
        _meta(probes=(ProbeSpec("a", 0.5, ProbeKind.EARLY),))
    with pytest.raises(BundleError, match="non-decreasing"):
        _meta(probes=(ProbeSpec("a", 0.9, ProbeKind.EARLY),
                      ProbeSpec("b", 0.2, ProbeKind.LAST_FC)))
    with pytest.raises(BundleError, match="input_size"):
        _meta(input_size=0)
    with pytest.raises(BundleError, match="std"):
        _meta(std=(1.0, 0.0, 1.0))
    with pytest.raises(BundleError, match="depth_fraction"):
        ProbeSpec("a", 1.5, ProbeKind.LAST_FC)


def test_preprocess_identity_normalization():
    g = Glyph((Dot(center=(0.5, 0.5), radius=0.05),))
    canvas = render(g, RenderStyle(Polarity.WHITE_ON_BLACK), 64)
    x = preprocess(canvas, _meta())
    assert x.shape == (1, 3, 64, 64)
    assert np.allclose(np.unique(x), [0.0, 1.0])
    assert x.max() == pytest.approx(255 / 255.0)


def test_preprocess_all_black_constant():
    canvas = Canvas(np.zeros((64, 64, 3), dtype=np.uint8))
    meta = _meta(mean=(0.5, 0.4, 0.3), std=(0.2, 0.2, 0.1))
    x = preprocess(canvas, meta)
    assert np.allclose(x[0, 0], (0 - 0.5) / 0.2)
    assert np.allclose(x[0, 1], (0 - 0.4) / 0.2)
    assert np.allclose(x[0, 2], (0 - 0.3) / 0.1, atol=1e-6)


def test_resize_preserves_disc_area_ratio():
    g = Glyph((Dot(center=(0.5, 0.5), radius=0.2),))
    big = render(g, RenderStyle(Polarity.WHITE_ON_BLACK), 448)
    img = big.pixels.astype(np.float64) / 255.0
    small = resize_bilinear(img, 224)
    ratio_big = (img[:, :, 0] > 0.5).mean()
    ratio_small = (small[:, :, 0] > 0.5).mean()
    assert abs(ratio_small - ratio_big) / ratio_big < 0.05


def test_resize_identity_is_exact():
    rngimg = np.random.default_rng(0).uniform(size=(64, 64, 3))
    assert resize_bilinear(rngimg, 64) is rngimg


def test_forward_deterministic_and_distinct_probes(smallnet_handle, rng):
    x = rng.normal(size=(1, 3, 64, 64)).astype(np.float32)
    a1 = forward_with_probes(smallnet_handle, x)
    a2 = forward_with_probes(smallnet_handle, x)
    for k in a1:
        assert np.array_equal(a1[k].values, a2[k].values)
    lengths = {k: v.values.size for k, v in a1.items()}
    assert len(set(lengths.values())) == len(lengths)  # distinct vectors per probe


def test_last_fc_probe_length_equals_classes(smallnet_handle):
    g = Glyph((Dot(center=(0.3, 0.3), radius=0.05),))
    canvas = render(g, RenderStyle(Polarity.WHITE_ON_BLACK), 64)
    acts = probe_canvas(smallnet_handle, canvas)
    assert acts["logits"].values.size == 3


def test_input_size_mismatch_rejected(smallnet_handle):
    from gestalt_probe.runtime import InferenceError

    with pytest.raises(InferenceError, match="input size"):
        forward_with_probes(smallnet_handle, np.zeros((1, 3, 32, 32), dtype=np.float32))


def test_activation_vector_rejects_empty_and_nonfinite():
    with pytest.raises(BundleError, match="empty"):
        ActivationVector("p", np.zeros(0))
    with pytest.raises(BundleError, match="non-finite"):
        ActivationVector("p", np.array([1.0, np.nan]))


def test_vector_dump_roundtrip(tmp_path, rng):
    vec = ActivationVector("probe", rng.normal(size=257).astype(np.float32))
    path = tmp_path / "v.bin"
    dump_vector(vec, path)
    back = load_vector(path, "probe")
    assert np.array_equal(back.values, vec.values)
    raw = path.read_bytes()
    assert len(raw) == 8 + 4 * 257
