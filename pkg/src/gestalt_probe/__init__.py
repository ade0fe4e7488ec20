"""gestalt-probe: configural-effect probing for feed-forward vision models.

Generates paired line/dot stimuli whose only informative difference is a
relational feature, measures per-layer discriminability of each pair inside
serialized vision models via cosine similarity, and compares the resulting
configural effects against bundled human discrimination data. Includes a
small from-scratch CNN for testing whether the relational features are
learnable at all.
"""

__version__ = "0.1.0"

from .canvas import (
    Canvas,
    ConcreteTransform,
    Dot,
    Glyph,
    Polarity,
    Polyline,
    RenderStyle,
    StimulusPair,
    TransformKind,
    TransformSpec,
    apply_transform,
    render,
    render_pair,
    sample_transform,
    transform_glyph,
    write_png,
)
from .dots import (
    ClassDataset,
    DotConfig,
    EFKind,
    EFSetSpec,
    Task,
    gen_ef_sequence,
    gen_sanity_pairs,
    gen_training_dataset,
)
from .metrics import (
    CEResult,
    CorrelationReport,
    cosine,
    exclusion_analysis,
    network_ce,
    pair_similarities,
    spearman,
)
from .pomerantz import HumanCERecord, StimulusSet, build_set, load_human_ce
from .runner import (
    ActivationVector,
    BundleMeta,
    ModelHandle,
    ProbeKind,
    ProbeSpec,
    forward_with_probes,
    load_model,
    preprocess,
    write_bundle,
)
from .smallnet import SmallNet, TrainConfig, gradient_check, save_bundle, train

__all__ = [
    "ActivationVector", "BundleMeta", "CEResult", "Canvas", "ClassDataset",
    "ConcreteTransform", "CorrelationReport", "Dot", "DotConfig", "EFKind",
    "EFSetSpec", "Glyph", "HumanCERecord", "ModelHandle", "Polarity",
    "Polyline", "ProbeKind", "ProbeSpec", "RenderStyle", "SmallNet",
    "StimulusPair", "StimulusSet", "Task", "TrainConfig", "TransformKind",
    "TransformSpec", "apply_transform", "build_set", "cosine",
    "exclusion_analysis", "forward_with_probes", "gen_ef_sequence",
    "gen_sanity_pairs", "gen_training_dataset", "gradient_check",
    "load_human_ce", "load_model", "network_ce", "pair_similarities",
    "preprocess", "render", "render_pair", "sample_transform", "save_bundle",
    "spearman", "train", "transform_glyph", "write_bundle", "write_png",
]
