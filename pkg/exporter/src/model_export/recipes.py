"""Export recipes for the supported torchvision architectures.

A recipe names the source model, its input geometry and normalization, and
how to place the five depth probes: the fractional probes (quarter, half,
three-quarter depth) resolve to the nearest post-activation convolution
output, the final-feature probe to the tensor entering the classifier head
(the input of the global pooling stage, or of the flatten when there is no
global pooling), and the readout probe to the last fully connected output.
Pretrained checkpoints are loaded from a local file when provided; without
one the architecture is seeded randomly, which still supports structural
and round-trip verification.

The recurrent/biological model families (CORnet-S and the VOne front-end
variants) have no torchvision source and no retrievable checkpoints in this
environment, so no recipes are declared for them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .convert import ConversionError, post_activation

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

FRACTIONS = {"early": 0.25, "middle_early": 0.5, "middle_late": 0.75}


@dataclass(frozen=True)
class ExportRecipe:
    model_name: str
    source: str                       # torchvision constructor name
    input_size: int = 224
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    probe_rules: dict = field(default_factory=lambda: {
        "early": "depth_fraction:0.25",
        "middle_early": "depth_fraction:0.5",
        "middle_late": "depth_fraction:0.75",
        "last_conv": "final_feature_map",
        "last_fc": "final_linear",
    })

    def build(self, weights_path: str | None = None, seed: int = 0) -> torch.nn.Module:
        import torchvision.models as tvm

        torch.manual_seed(seed)
        ctor = getattr(tvm, self.source)
        kwargs = {"weights": None}
        if self.source == "inception_v3":
            kwargs.update(aux_logits=True, init_weights=True)
        model = ctor(**kwargs)
        if weights_path:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        return model.eval()


RECIPES: dict[str, ExportRecipe] = {
    name: ExportRecipe(model_name=name, source=src, input_size=size)
    for name, src, size in (
        ("alexnet", "alexnet", 224),
        ("vgg19", "vgg19", 224),
        ("resnet18", "resnet18", 224),
        ("resnet50", "resnet50", 224),
        ("resnet152", "resnet152", 224),
        ("inception_v3", "inception_v3", 299),
        ("densenet121", "densenet121", 224),
    )
}


def get_recipe(name: str) -> ExportRecipe:
    try:
        return RECIPES[name]
    except KeyError:
        raise KeyError(
            f"no recipe for {name!r}; available: {sorted(RECIPES)}"
        ) from None


def resolve_probes(recipe: ExportRecipe, graph, info) -> list[dict]:
    """Turn a recipe's probe rules into concrete (name, fraction, kind) entries."""
    convs = info["conv_outputs"]
    total_depth = len(convs) + len(info["gemm_outputs"])
    if not convs or not info["gemm_outputs"]:
        raise ConversionError("model must contain conv and linear layers to probe")

    fraction_kinds = [k for k, r in recipe.probe_rules.items()
                      if r.startswith("depth_fraction:")]
    fraction_kinds.sort(key=lambda k: float(recipe.probe_rules[k].split(":", 1)[1]))
    desired = [round(float(recipe.probe_rules[k].split(":", 1)[1]) * total_depth)
               for k in fraction_kinds]
    # clamp into the conv range (the last conv is reserved) while keeping the
    # indices strictly increasing: shallow stacks get neighbouring layers
    hi = len(convs) - 1
    for k in range(len(desired) - 1, -1, -1):
        desired[k] = min(desired[k], hi)
        hi = desired[k] - 1
    lo = 1
    for k in range(len(desired)):
        desired[k] = max(desired[k], lo)
        lo = desired[k] + 1
    if desired and desired[-1] > len(convs) - 1:
        raise ConversionError(
            f"model too shallow for distinct depth probes ({len(convs)} convs)"
        )
    fraction_idx = dict(zip(fraction_kinds, desired))

    resolved: dict[str, tuple[str, float]] = {}
    for kind, rule in recipe.probe_rules.items():
        if rule.startswith("depth_fraction:"):
            idx = fraction_idx[kind]
            resolved[kind] = (post_activation(info, convs[idx - 1]), idx / total_depth)
        elif rule == "final_feature_map":
            resolved[kind] = (_final_feature_map(graph), len(convs) / total_depth)
        elif rule == "final_linear":
            resolved[kind] = (info["gemm_outputs"][-1], 1.0)
        else:
            # explicit tensor name, fraction inferred from its conv position
            name = rule
            frac = (convs.index(name) + 1) / total_depth if name in convs else 1.0
            resolved[kind] = (name, frac)

    order = ("early", "middle_early", "middle_late", "last_conv", "last_fc")
    probes = []
    used = set()
    prev_frac = 0.0
    for kind in order:
        name, frac = resolved[kind]
        if name in used:
            raise ConversionError(
                f"probe {kind} resolved to {name!r}, already used; "
                "model too shallow for distinct probes"
            )
        used.add(name)
        frac = max(frac, prev_frac)  # keep metadata monotone
        prev_frac = frac
        probes.append({"name": name, "depth_fraction": round(frac, 6), "kind": kind})
    return probes


def _final_feature_map(graph) -> str:
    """Input tensor of the classifier head: the global-pool stage when present,
    otherwise the first flatten."""
    for node in graph.nodes:
        if node.op_type == "GlobalAveragePool":
            return node.inputs[0]
    for node in graph.nodes:
        if node.op_type == "Flatten":
            return node.inputs[0]
    raise ConversionError("no pooling or flatten stage found for the final feature map")
