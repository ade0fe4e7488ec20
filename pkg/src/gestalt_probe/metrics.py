"""Similarity metrics, configural effects, and rank-correlation statistics.

The discriminability of an image pair at a probe is the cosine similarity of
the two activation vectors. The configural effect of a context is the mean
base-pair similarity minus the mean composite-pair similarity over matched
repetitions: positive values mean the context made the pair easier to tell
apart (superiority), negative values mean it interfered. Agreement with the
bundled human effects is quantified with Spearman's rank correlation
(mid-ranks; exact permutation p for small n, Student-t approximation
otherwise), plus an exclusion variant that drops a named subset of sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy import stats as _sstats

from .canvas import (
    CanvasError,
    ConcreteTransform,
    IDENTITY_TRANSFORM,
    StimulusPair,
    TransformKind,
    TransformSpec,
    apply_transform,
    render_pair,
    sample_transform,
)
from .runner import ModelHandle, probe_canvas

EXCLUDED_DRIVER_SETS = frozenset({1, 2, 3, 13, 16})
MAX_TRANSFORM_RETRIES = 100


class MetricError(ValueError):
    """Raised for degenerate vectors or undefined statistics."""


def cosine(a, b) -> float:
    """dot(a, b) / (|a| |b|), computed in float64.

    Zero-norm vectors are an error, never silently zero.
    """
    va = np.asarray(getattr(a, "values", a), dtype=np.float64).reshape(-1)
    vb = np.asarray(getattr(b, "values", b), dtype=np.float64).reshape(-1)
    if va.shape != vb.shape:
        raise MetricError(f"length mismatch: {va.size} vs {vb.size}")
    na = math.sqrt(float(va @ va))
    nb = math.sqrt(float(vb @ vb))
    if na == 0.0 or nb == 0.0:
        raise MetricError("degenerate activation: zero-norm vector")
    c = float(va @ vb) / (na * nb)
    return min(1.0, max(-1.0, c))


@dataclass(frozen=True)
class CEResult:
    set_or_ef: str
    probe_name: str
    base_similarity: float
    composite_similarity: float
    network_ce: float
    n_repetitions: int
    ce_std_err: float


@dataclass(frozen=True)
class CorrelationReport:
    probe_name: str
    rho: float
    p_value: float
    n: int
    excluded_sets: tuple[int, ...] = ()


def _rep_seed(seed: int, rep: int, tag: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(rep, tag))
    return int(ss.generate_state(1)[0])


def sample_valid_transform(spec, pairs, seed, rep):
    """Draw a transform that keeps every glyph of every pair in frame."""
    if spec is None or spec.kind is TransformKind.NONE:
        return IDENTITY_TRANSFORM, pairs
    for attempt in range(MAX_TRANSFORM_RETRIES):
        t = sample_transform(spec, _rep_seed(seed, rep, 100 + attempt))
        try:
            return t, tuple(apply_transform(p, t) for p in pairs)
        except CanvasError:
            continue
    raise MetricError(f"no in-frame transform found after {MAX_TRANSFORM_RETRIES} draws")


def pair_similarities(pair: StimulusPair, handle: ModelHandle,
                      probes: list[str] | None = None) -> dict[str, float]:
    """Per-probe cosine similarity between the two images of a pair."""
    acts_a = probe_canvas(handle, pair.image_a)
    acts_b = probe_canvas(handle, pair.image_b)
    names = probes if probes is not None else handle.meta.probe_names()
    return {name: cosine(acts_a[name], acts_b[name]) for name in names}


def _rerender(pair: StimulusPair, rep_style_seed: int) -> StimulusPair:
    if pair.glyph_a is None or pair.glyph_b is None or pair.style is None:
        return pair  # fixed-pixel pair: nothing to rerandomize
    style = pair.style.with_seed(rep_style_seed)
    return render_pair(pair.glyph_a, pair.glyph_b, style, pair.size)


def network_ce(
    base: StimulusPair,
    composite: StimulusPair,
    handle: ModelHandle,
    probes: list[str] | None = None,
    repetitions: int = 1,
    transform_spec: TransformSpec | None = None,
    seed: int = 0,
    set_or_ef: str = "",
) -> list[CEResult]:
    """Configural effect per probe, averaged over repetitions.

    Each repetition samples one transform and one background stream, applied
    identically to the base pair and the composite pair (and within each
    pair), so an empty context yields exactly zero effect at every probe.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    names = probes if probes is not None else handle.meta.probe_names()
    base_sims = {n: [] for n in names}
    comp_sims = {n: [] for n in names}
    for rep in range(repetitions):
        bg_seed = _rep_seed(seed, rep, 0)
        base_r = _rerender(base, bg_seed)
        comp_r = _rerender(composite, bg_seed)
        try:
            _t, (base_r, comp_r) = sample_valid_transform(
                transform_spec, (base_r, comp_r), seed, rep
            )
            sims_b = pair_similarities(base_r, handle, names)
            sims_c = pair_similarities(comp_r, handle, names)
        except (MetricError, CanvasError) as exc:
            raise MetricError(f"repetition {rep}: {exc}") from exc
        for n in names:
            base_sims[n].append(sims_b[n])
            comp_sims[n].append(sims_c[n])
    return [
        _aggregate(set_or_ef, n, base_sims[n], comp_sims[n]) for n in names
    ]


def _aggregate(set_or_ef: str, probe: str, base_vals: list[float],
               comp_vals: list[float]) -> CEResult:
    b = np.asarray(base_vals, dtype=np.float64)
    c = np.asarray(comp_vals, dtype=np.float64)
    ces = b - c
    n = len(ces)
    if n > 1 and not np.all(ces == ces[0]):
        stderr = float(ces.std(ddof=1) / math.sqrt(n))
    else:
        stderr = 0.0
    return CEResult(
        set_or_ef=set_or_ef,
        probe_name=probe,
        base_similarity=float(b.mean()),
        composite_similarity=float(c.mean()),
        network_ce=float(b.mean() - c.mean()),
        n_repetitions=n,
        ce_std_err=stderr,
    )


def aggregate_sequences(set_or_ef: str, probe: str, base_vals, comp_vals) -> CEResult:
    """Public aggregation used by drivers that generate a fresh stimulus per
    repetition (dot-pattern sequences) but share the similarity math."""
    return _aggregate(set_or_ef, probe, list(base_vals), list(comp_vals))


# ---------------------------------------------------------------------------
# Spearman rank correlation
# ---------------------------------------------------------------------------

def midranks(x) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mid-rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise MetricError("undefined correlation: constant input series")
    return min(1.0, max(-1.0, float(xc @ yc) / denom))


def _t_approx_p(rho: float, n: int) -> float:
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return float(2.0 * _sstats.t.sf(abs(t), df=n - 2))


def _exact_perm_p(rx: np.ndarray, ry: np.ndarray, rho_obs: float) -> float:
    n = rx.size
    perms = np.array(list(permutations(range(n))), dtype=np.int64)
    ry_perm = ry[perms]  # (n!, n)
    xc = rx - rx.mean()
    yc = ry_perm - ry_perm.mean(axis=1, keepdims=True)
    num = yc @ xc
    denom = math.sqrt(float(xc @ xc)) * np.sqrt((yc * yc).sum(axis=1))
    rhos = num / denom
    return float(np.mean(np.abs(rhos) >= abs(rho_obs) - 1e-12))


def spearman(x, y, exact_threshold: int = 8) -> tuple[float, float]:
    """Spearman rho with a two-sided p-value.

    p is an exact full permutation enumeration for n <= exact_threshold and
    the Student-t approximation above that.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise MetricError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 4:
        raise MetricError(f"need n >= 4, got {x.size}")
    rx, ry = midranks(x), midranks(y)
    rho = _pearson(rx, ry)
    if x.size <= exact_threshold:
        p = _exact_perm_p(rx, ry, rho)
    else:
        p = _t_approx_p(rho, x.size)
    return rho, p


def exclusion_analysis(
    ce_by_set: dict[int, float],
    human_ce: dict[int, float],
    excluded: frozenset[int] = EXCLUDED_DRIVER_SETS,
    probe_name: str = "",
) -> tuple[CorrelationReport, CorrelationReport]:
    """Rank correlation with and without the named driver sets."""
    ids = sorted(ce_by_set)
    if sorted(human_ce) != ids:
        raise MetricError("network and human effect tables cover different sets")
    net = [ce_by_set[i] for i in ids]
    hum = [human_ce[i] for i in ids]
    rho, p = spearman(hum, net)
    full = CorrelationReport(probe_name=probe_name, rho=rho, p_value=p, n=len(ids))
    kept = [i for i in ids if i not in excluded]
    if kept == ids:
        return full, CorrelationReport(
            probe_name=probe_name, rho=rho, p_value=p, n=len(ids), excluded_sets=()
        )
    rho_x, p_x = spearman([human_ce[i] for i in kept], [ce_by_set[i] for i in kept])
    report_x = CorrelationReport(
        probe_name=probe_name, rho=rho_x, p_value=p_x, n=len(kept),
        excluded_sets=tuple(sorted(excluded & set(ids))),
    )
    return full, report_x
