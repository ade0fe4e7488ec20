"""Bundle export and round-trip verification.

export() converts a torch model to the graph+sidecar bundle consumed by the
probing harness, exposing every probe tensor as an extra graph output.
verify_roundtrip() then feeds identical random inputs to the source model
(executed through the fx interpreter so intermediate fx node values can be
captured by name) and to the harness's numpy evaluator, and reports the
worst relative deviation per probe.
"""

from __future__ import annotations

import os

import numpy as np
import torch
from torch.fx import Interpreter

from gestalt_probe.runner import (
    BundleMeta,
    ProbeKind,
    ProbeSpec,
    forward_with_probes,
    load_model,
    write_bundle,
)

from .convert import convert_model
from .recipes import ExportRecipe, resolve_probes


def export(recipe: ExportRecipe, out_dir: str, weights_path: str | None = None,
           seed: int = 0):
    """Write <name>.onnx + <name>.meta.json; returns (bundle_path, model, info)."""
    model = recipe.build(weights_path=weights_path, seed=seed)
    graph, info = convert_model(model, recipe.input_size, graph_name=recipe.model_name)
    probes = resolve_probes(recipe, graph, info)

    declared = {name for name, _ in graph.outputs}
    shapes = _probe_shapes(info)
    for p in probes:
        if p["name"] not in declared:
            graph.outputs.append((p["name"], shapes.get(p["name"], ())))
            declared.add(p["name"])

    meta = BundleMeta(
        input_size=recipe.input_size,
        mean=tuple(recipe.mean),
        std=tuple(recipe.std),
        probes=tuple(
            ProbeSpec(name=p["name"], depth_fraction=p["depth_fraction"],
                      kind=ProbeKind(p["kind"]))
            for p in probes
        ),
        total_depth=len(info["conv_outputs"]) + len(info["gemm_outputs"]),
        name=recipe.model_name,
    )
    os.makedirs(out_dir, exist_ok=True)
    bundle_path = write_bundle(graph, meta, os.path.join(out_dir, f"{recipe.model_name}.onnx"))
    return bundle_path, model, info


class _CapturingInterpreter(Interpreter):
    """fx interpreter that records the tensors named by the probe set."""

    def __init__(self, gm, wanted: set[str]):
        super().__init__(gm)
        self.wanted = wanted
        self.captured: dict[str, torch.Tensor] = {}

    def run_node(self, n):
        out = super().run_node(n)
        if n.name in self.wanted:
            self.captured[n.name] = out
        return out


def verify_roundtrip(bundle_path: str, model: torch.nn.Module, info: dict,
                     n_images: int = 10, seed: int = 0, tolerance: float = 1e-4):
    """Compare probe activations between torch and the harness evaluator.

    Returns (max_relative_deviation, per_probe dict). Deviation is
    max|a - b| / max(|b|_inf, 1e-6) per probe, worst over images.
    """
    handle = load_model(bundle_path)
    gm = info["graph_module"]
    probe_names = handle.meta.probe_names()
    input_name = "input"
    wanted = {n for n in probe_names}
    rng = np.random.default_rng(seed)
    size = handle.meta.input_size
    worst: dict[str, float] = {n: 0.0 for n in probe_names}
    for _ in range(n_images):
        x = rng.standard_normal((1, 3, size, size)).astype(np.float32)
        acts = forward_with_probes(handle, x)
        interp = _CapturingInterpreter(gm, wanted | {input_name})
        with torch.no_grad():
            final = interp.run(torch.from_numpy(x))
        captured = dict(interp.captured)
        captured.setdefault(info["final_output"], final)
        for name in probe_names:
            ref = captured[name].detach().numpy().reshape(-1)
            got = acts[name].values
            scale = max(float(np.abs(ref).max()), 1e-6)
            dev = float(np.abs(got - ref.astype(np.float32)).max()) / scale
            worst[name] = max(worst[name], dev)
    overall = max(worst.values())
    report = {"max_relative_deviation": overall, "per_probe": worst,
              "tolerance": tolerance, "passed": overall <= tolerance}
    return overall, report


def _probe_shapes(info) -> dict[str, tuple]:
    gm = info["graph_module"]
    shapes = {}
    for node in gm.graph.nodes:
        meta = node.meta.get("tensor_meta")
        if meta is not None and hasattr(meta, "shape"):
            shapes[node.name] = tuple(int(d) for d in meta.shape)
    return shapes
