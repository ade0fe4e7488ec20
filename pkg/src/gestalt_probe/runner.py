"""Bundle loading, preprocessing, and probe-tapped forward passes.

A model bundle is an ONNX graph file plus a ``<model>.meta.json`` sidecar
declaring input size, per-channel normalization, and the ordered list of
named depth probes (early .. last_fc). Probes name tensors in the graph;
resolution is verified at load time. Forward passes return one flattened
float32 vector per probe, flattened in C order (channel, then row, then
column), which keeps the layout identical across runs and platforms.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .canvas import Canvas
from .onnx_io import OnnxGraph, load_model as load_graph, save_model as save_graph
from .runtime import InferenceError, evaluate

PROBE_KINDS = ("early", "middle_early", "middle_late", "last_conv", "last_fc")


class BundleError(ValueError):
    """Raised when a bundle's graph/metadata are missing or inconsistent."""


class ProbeKind(str, Enum):
    EARLY = "early"
    MIDDLE_EARLY = "middle_early"
    MIDDLE_LATE = "middle_late"
    LAST_CONV = "last_conv"
    LAST_FC = "last_fc"


@dataclass(frozen=True)
class ProbeSpec:
    name: str
    depth_fraction: float
    kind: ProbeKind

    def __post_init__(self):
        if not 0.0 < self.depth_fraction <= 1.0:
            raise BundleError(
                f"probe {self.name!r}: depth_fraction {self.depth_fraction} outside (0,1]"
            )


@dataclass(frozen=True)
class BundleMeta:
    input_size: int
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    probes: tuple[ProbeSpec, ...]
    total_depth: int
    name: str = ""

    def __post_init__(self):
        if self.input_size <= 0:
            raise BundleError(f"input_size must be positive, got {self.input_size}")
        if not self.probes:
            raise BundleError("bundle declares no probes")
        fracs = [p.depth_fraction for p in self.probes]
        if any(b < a for a, b in zip(fracs, fracs[1:])):
            raise BundleError(f"probe depth fractions must be non-decreasing, got {fracs}")
        n_fc = sum(1 for p in self.probes if p.kind is ProbeKind.LAST_FC)
        if n_fc != 1:
            raise BundleError(f"bundle must declare exactly one last_fc probe, got {n_fc}")
        if any(s == 0 for s in self.std):
            raise BundleError("normalization std contains zero")

    def probe_names(self) -> list[str]:
        return [p.name for p in self.probes]


@dataclass(frozen=True)
class ActivationVector:
    probe_name: str
    values: np.ndarray  # flat float32

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if v.size == 0:
            raise BundleError(f"probe {self.probe_name!r} produced an empty vector")
        if not np.all(np.isfinite(v)):
            raise BundleError(f"probe {self.probe_name!r} produced non-finite values")
        object.__setattr__(self, "values", v)


@dataclass
class ModelHandle:
    graph: OnnxGraph
    meta: BundleMeta
    path: str = ""


def meta_path_for(graph_path: str) -> str:
    base = str(graph_path)
    if base.endswith(".onnx"):
        base = base[: -len(".onnx")]
    return base + ".meta.json"


def meta_to_dict(meta: BundleMeta) -> dict:
    return {
        "name": meta.name,
        "input_size": meta.input_size,
        "normalization": {"mean": list(meta.mean), "std": list(meta.std)},
        "probes": [
            {"name": p.name, "depth_fraction": p.depth_fraction, "kind": p.kind.value}
            for p in meta.probes
        ],
        "total_depth": meta.total_depth,
    }


def meta_from_dict(obj: dict) -> BundleMeta:
    try:
        norm = obj["normalization"]
        probes = tuple(
            ProbeSpec(name=p["name"], depth_fraction=float(p["depth_fraction"]),
                      kind=ProbeKind(p["kind"]))
            for p in obj["probes"]
        )
        return BundleMeta(
            input_size=int(obj["input_size"]),
            mean=tuple(float(v) for v in norm["mean"]),
            std=tuple(float(v) for v in norm["std"]),
            probes=probes,
            total_depth=int(obj["total_depth"]),
            name=str(obj.get("name", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, BundleError):
            raise
        raise BundleError(f"malformed bundle metadata: {exc}") from exc


def write_bundle(graph: OnnxGraph, meta: BundleMeta, graph_path) -> str:
    """Write graph + sidecar; returns the graph path."""
    save_graph(graph, graph_path)
    with open(meta_path_for(graph_path), "w") as fh:
        json.dump(meta_to_dict(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(graph_path)


def load_model(bundle_path) -> ModelHandle:
    """Load a bundle and verify its probes resolve to graph tensors."""
    bundle_path = str(bundle_path)
    if not os.path.exists(bundle_path):
        raise BundleError(f"graph file not found: {bundle_path}")
    sidecar = meta_path_for(bundle_path)
    if not os.path.exists(sidecar):
        raise BundleError(f"metadata sidecar not found: {sidecar}")
    graph = load_graph(bundle_path)
    with open(sidecar) as fh:
        meta = meta_from_dict(json.load(fh))
    produced = graph.produced_names()
    missing = [p.name for p in meta.probes if p.name not in produced]
    if missing:
        available = sorted(n for n in produced if n not in graph.initializers)
        preview = ", ".join(available[:20]) + (" ..." if len(available) > 20 else "")
        raise BundleError(
            f"unknown probe node(s) {missing}; available tensors: {preview}"
        )
    feeds = graph.feed_names()
    if len(feeds) != 1:
        raise BundleError(f"bundle must have exactly one input tensor, got {feeds}")
    return ModelHandle(graph=graph, meta=meta, path=bundle_path)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def resize_bilinear(img: np.ndarray, out_size: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) float array with half-pixel centers."""
    h, w = img.shape[:2]
    if h == out_size and w == out_size:
        return img
    def axis_coords(n_in, n_out):
        scale = n_in / n_out
        coords = (np.arange(n_out) + 0.5) * scale - 0.5
        lo = np.clip(np.floor(coords).astype(np.int64), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(coords - lo, 0.0, 1.0)
        return lo, hi, frac

    ylo, yhi, yf = axis_coords(h, out_size)
    xlo, xhi, xf = axis_coords(w, out_size)
    top = img[ylo][:, xlo] * (1 - xf)[None, :, None] + img[ylo][:, xhi] * xf[None, :, None]
    bot = img[yhi][:, xlo] * (1 - xf)[None, :, None] + img[yhi][:, xhi] * xf[None, :, None]
    return top * (1 - yf)[:, None, None] + bot * yf[:, None, None]


def preprocess(canvas: Canvas, meta: BundleMeta) -> np.ndarray:
    """Canvas -> normalized (1, 3, S, S) float32 tensor."""
    img = canvas.pixels.astype(np.float64) / 255.0
    img = resize_bilinear(img, meta.input_size)
    mean = np.asarray(meta.mean, dtype=np.float64)
    std = np.asarray(meta.std, dtype=np.float64)
    img = (img - mean) / std
    chw = np.transpose(img, (2, 0, 1))[None, ...]
    return np.ascontiguousarray(chw, dtype=np.float32)


def forward_with_probes(handle: ModelHandle, input_tensor: np.ndarray) -> dict[str, ActivationVector]:
    """One forward pass; returns flattened activations at every probe."""
    x = np.asarray(input_tensor, dtype=np.float32)
    expected = handle.meta.input_size
    if x.ndim != 4 or x.shape[2] != expected or x.shape[3] != expected:
        raise InferenceError(
            f"input shape {x.shape} does not match bundle input size {expected}"
        )
    feed_name = handle.graph.feed_names()[0]
    names = handle.meta.probe_names()
    raw = evaluate(handle.graph, {feed_name: x}, wanted=names)
    return {
        name: ActivationVector(probe_name=name, values=np.ascontiguousarray(raw[name]).reshape(-1))
        for name in names
    }


def probe_canvas(handle: ModelHandle, canvas: Canvas) -> dict[str, ActivationVector]:
    return forward_with_probes(handle, preprocess(canvas, handle.meta))


# ---------------------------------------------------------------------------
# Offline activation dumps (little-endian float32, length-prefixed)
# ---------------------------------------------------------------------------

def dump_vector(vec: ActivationVector, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", vec.values.size))
        fh.write(vec.values.astype("<f4").tobytes())


def load_vector(path, probe_name: str = "") -> ActivationVector:
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
    if data.size != count:
        raise BundleError(f"vector file {path} truncated: {data.size} of {count} values")
    return ActivationVector(probe_name=probe_name or os.path.basename(str(path)), values=data)
