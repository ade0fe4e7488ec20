"""Secondary acceptance gates.

1. Round-trip fidelity: every exported bundle reproduces the source model's
   probe activations within 1e-4 relative error on 10 random images.
2. Published-value reproduction with an ImageNet-pretrained bundle. No
   pretrained checkpoints are retrievable in an offline environment, so this
   test runs only when GESTALT_PRETRAINED_BUNDLE points at a bundle exported
   from real weights; otherwise it skips with that reason.
"""

import os

import numpy as np
import pytest

from gestalt_probe.canvas import Polarity, RenderStyle
from gestalt_probe.dots import EFKind, EFSetSpec, gen_ef_sequence, gen_sanity_pairs
from gestalt_probe.metrics import aggregate_sequences, exclusion_analysis, network_ce, pair_similarities
from gestalt_probe.pomerantz import N_SETS, build_set, load_human_ce
from gestalt_probe.canvas import render_pair
from gestalt_probe.runner import load_model

from model_export import export, get_recipe, verify_roundtrip

ROUNDTRIP_TOLERANCE = 1e-4
N_IMAGES = 10

FAST_ROSTER = ("alexnet", "resnet18")
FULL_ROSTER = ("vgg19", "resnet152", "inception_v3", "densenet121")


def _roundtrip(name, tmp_path, n_images=N_IMAGES):
    recipe = get_recipe(name)
    bundle, model, info = export(recipe, str(tmp_path), seed=11)
    overall, report = verify_roundtrip(bundle, model, info, n_images=n_images, seed=5,
                                       tolerance=ROUNDTRIP_TOLERANCE)
    print(f"[SECONDARY] round-trip {name}: max dev {overall:.3g} "
          f"(tol {ROUNDTRIP_TOLERANCE:g}) -> {'PASS' if report['passed'] else 'FAIL'}")
    assert report["passed"], report
    handle = load_model(bundle)  # load-time probe resolution, no warnings
    assert len(handle.meta.probes) == 5


@pytest.mark.parametrize("name", FAST_ROSTER)
def test_roundtrip_fidelity_fast_roster(name, tmp_path):
    _roundtrip(name, tmp_path)


@pytest.mark.slow
@pytest.mark.parametrize("name", FULL_ROSTER)
def test_roundtrip_fidelity_full_roster(name, tmp_path):
    _roundtrip(name, tmp_path)


def test_identity_roundtrip_is_zero(tmp_path):
    # same runtime run twice on the same bundle: deviation exactly 0
    bundle, model, info = export(get_recipe("alexnet"), str(tmp_path), seed=1)
    handle = load_model(bundle)
    from gestalt_probe.runner import forward_with_probes

    x = np.random.default_rng(0).standard_normal((1, 3, 224, 224)).astype(np.float32)
    a = forward_with_probes(handle, x)
    b = forward_with_probes(handle, x)
    dev = max(float(np.abs(a[k].values - b[k].values).max()) for k in a)
    print(f"[SECONDARY] identity round-trip: deviation {dev}")
    assert dev == 0.0


def test_smallnet_bundle_roundtrip_same_arithmetic(tmp_path):
    # the internal reference net exported by the primary package, checked
    # through the exporter's comparison path against its own forward pass
    from gestalt_probe.smallnet import SmallNet, save_bundle
    from gestalt_probe.runner import forward_with_probes

    net = SmallNet(input_size=64, n_classes=3, seed=2)
    handle = load_model(save_bundle(net, tmp_path / "s.onnx"))
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(5):
        x = rng.uniform(0, 1, size=(1, 3, 64, 64)).astype(np.float32)
        acts = forward_with_probes(handle, x)
        gray = x.mean(axis=1, keepdims=True)
        direct = net.forward(gray)
        scale = max(1e-6, float(np.abs(direct).max()))
        worst = max(worst, float(np.abs(direct[0] - acts["logits"].values).max()) / scale)
    print(f"[SECONDARY] SmallNet bundle deviation: {worst:.3g}")
    assert worst <= 1e-5


# ---------------------------------------------------------------------------
# Published-value reproduction (needs pretrained weights)
# ---------------------------------------------------------------------------

PRETRAINED_ENV = "GESTALT_PRETRAINED_BUNDLE"

pretrained = pytest.mark.skipif(
    PRETRAINED_ENV not in os.environ,
    reason=(
        "requires an ImageNet-pretrained bundle; no checkpoints are retrievable "
        f"offline. Export one with real weights and set {PRETRAINED_ENV}."
    ),
)


@pytest.fixture(scope="module")
def pretrained_handle():
    return load_model(os.environ[PRETRAINED_ENV])


def _probe_by_kind(handle, kind):
    return [p.name for p in handle.meta.probes if p.kind.value == kind][0]


@pretrained
def test_exp2_base_pair_similarity_point_nine(pretrained_handle):
    handle = pretrained_handle
    style = RenderStyle(Polarity.BLACK_ON_RANDOM)
    last_fc = _probe_by_kind(handle, "last_fc")
    sims = []
    for seed in range(100):
        seq = gen_ef_sequence(EFSetSpec(kind=EFKind.PROXIMITY, seed=seed, style=style),
                              size=handle.meta.input_size)
        sims.append(pair_similarities(seq.base, handle, [last_fc])[last_fc])
    mean_sim = float(np.mean(sims))
    print(f"[SECONDARY] base dot-pair similarity at last_fc: {mean_sim:.3f}")
    assert 0.8 <= mean_sim <= 1.0


@pretrained
def test_sanity_empty_pair_near_one_and_above_dot_pair(pretrained_handle):
    handle = pretrained_handle
    style = RenderStyle(Polarity.BLACK_ON_RANDOM)
    names = handle.meta.probe_names()
    empty, dot = {n: [] for n in names}, {n: [] for n in names}
    for seed in range(20):
        pairs = gen_sanity_pairs(style, seed, size=handle.meta.input_size)
        se = pair_similarities(pairs.empty_pair, handle, names)
        sd = pair_similarities(pairs.empty_vs_dot, handle, names)
        for n in names:
            empty[n].append(se[n])
            dot[n].append(sd[n])
    for n in names:
        e, d = float(np.mean(empty[n])), float(np.mean(dot[n]))
        print(f"[SECONDARY] sanity {n}: empty {e:.3f} vs empty-dot {d:.3f}")
        assert e > d
    last_fc = _probe_by_kind(handle, "last_fc")
    assert float(np.mean(empty[last_fc])) >= 0.95


@pretrained
def test_exp2_directional_findings(pretrained_handle):
    handle = pretrained_handle
    style = RenderStyle(Polarity.BLACK_ON_RANDOM)
    last_fc = _probe_by_kind(handle, "last_fc")
    last_conv = _probe_by_kind(handle, "last_conv")
    names = [last_conv, last_fc]
    results = {}
    for kind in (EFKind.PROXIMITY, EFKind.ORIENTATION, EFKind.LINEARITY):
        base_sims = {n: [] for n in names}
        comp_sims = {n: [] for n in names}
        for seed in range(100):
            seq = gen_ef_sequence(EFSetSpec(kind=kind, seed=seed, style=style),
                                  size=handle.meta.input_size)
            sb = pair_similarities(seq.base, handle, names)
            sc = pair_similarities(seq.composite, handle, names)
            for n in names:
                base_sims[n].append(sb[n])
                comp_sims[n].append(sc[n])
        for n in names:
            results[(kind, n)] = aggregate_sequences(kind.value, n,
                                                     base_sims[n], comp_sims[n])
    for kind in (EFKind.ORIENTATION, EFKind.LINEARITY):
        ce = results[(kind, last_conv)].network_ce
        print(f"[SECONDARY] {kind.value} effect at last conv: {ce:+.4f}")
        assert ce <= 0.0
    prox = results[(EFKind.PROXIMITY, last_fc)].network_ce
    print(f"[SECONDARY] proximity effect at last fc: {prox:+.4f}")
    assert 0.0 < prox < 0.05


@pretrained
def test_exp1_sign_pattern_and_rank_correlation(pretrained_handle):
    handle = pretrained_handle
    style = RenderStyle(Polarity.BLACK_ON_RANDOM)
    last_fc = _probe_by_kind(handle, "last_fc")
    from gestalt_probe.canvas import TransformKind, TransformSpec

    ces = {}
    for set_id in range(1, N_SETS + 1):
        sset = build_set(set_id)
        base = render_pair(*sset.base_glyphs, style.with_seed(set_id), handle.meta.input_size)
        comp = render_pair(*sset.composite_glyphs, base.style, handle.meta.input_size)
        res = network_ce(base, comp, handle, probes=[last_fc], repetitions=100,
                         transform_spec=TransformSpec(kind=TransformKind.TRANSLATE),
                         seed=set_id, set_or_ef=f"set_{set_id:02d}")
        ces[set_id] = res[0].network_ce
    for i in (1, 2, 3):
        print(f"[SECONDARY] set {i} effect: {ces[i]:+.4f}")
        assert ces[i] > 0.0
    for i in (4, 5):
        print(f"[SECONDARY] set {i} effect: {ces[i]:+.4f}")
        assert ces[i] <= 0.01
    human = {r.set_id: r.human_ce for r in load_human_ce()}
    full, excl = exclusion_analysis(ces, human)
    print(f"[SECONDARY] rho full {full.rho:.3f} vs excluded {excl.rho:.3f}")
    assert 0.35 <= full.rho <= 0.75
    assert full.rho - excl.rho >= 0.3
