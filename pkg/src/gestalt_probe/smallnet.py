"""Desk-scale convolutional classifier trained from scratch with plain SGD.

Architecture: conv(16, 3x3) - relu - maxpool2 - conv(32, 3x3) - relu -
maxpool2 - dense(128) - relu - dense(n_classes). Forward/backward are
written directly in numpy (im2col convolutions, first-match max pooling,
softmax cross-entropy), which keeps training deterministic for a fixed seed
and makes the analytic gradients checkable against central finite
differences. The net serializes to the same graph-bundle format the runner
consumes, with a fixed 3-to-1 channel-averaging stem so RGB canvases feed
the grayscale network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dots import ClassDataset
from .onnx_io import OnnxGraph
from .runner import BundleMeta, ProbeKind, ProbeSpec, write_bundle


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("learning_rate, batch_size and epochs must be positive")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    history: list[EpochStats] = field(default_factory=list)

    def losses(self) -> list[float]:
        return [e.loss for e in self.history]


def _im2col(x, kh, kw):
    n, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + ho, j : j + wo]
    return cols.reshape(n, c * kh * kw, ho * wo), (ho, wo)


def _col2im(dcols, x_shape, kh, kw):
    n, c, h, w = x_shape
    ho, wo = h - kh + 1, w - kw + 1
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + ho, j : j + wo] += dcols[:, :, i, j]
    return dx


class SmallNet:
    """Two conv blocks plus a two-layer head; weights in a flat name->array dict."""

    def __init__(self, input_size: int = 64, n_classes: int = 3, seed: int = 0,
                 dtype=np.float32, conv1_filters: int = 16, conv2_filters: int = 32,
                 hidden: int = 128):
        self.input_size = int(input_size)
        self.n_classes = int(n_classes)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        s1 = input_size - 2
        p1 = s1 // 2
        s2 = p1 - 2
        p2 = s2 // 2
        if p2 < 1:
            raise ValueError(f"input size {input_size} too small for the architecture")
        self.shapes = {"conv1": s1, "pool1": p1, "conv2": s2, "pool2": p2}
        self.flat_dim = conv2_filters * p2 * p2

        def he(shape, fan_in):
            return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)

        # Small nonzero biases keep activations off the all-zero degenerate
        # path for blank inputs.
        self.params: dict[str, np.ndarray] = {
            "W1": he((conv1_filters, 1, 3, 3), 9).astype(self.dtype),
            "b1": rng.uniform(0.01, 0.05, size=conv1_filters).astype(self.dtype),
            "W2": he((conv2_filters, conv1_filters, 3, 3), conv1_filters * 9).astype(self.dtype),
            "b2": rng.uniform(0.01, 0.05, size=conv2_filters).astype(self.dtype),
            "W3": he((self.flat_dim, hidden), self.flat_dim).astype(self.dtype),
            "b3": rng.uniform(0.01, 0.05, size=hidden).astype(self.dtype),
            "W4": he((hidden, n_classes), hidden).astype(self.dtype),
            "b4": rng.uniform(0.01, 0.05, size=n_classes).astype(self.dtype),
        }

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "SmallNet":
        self.dtype = np.dtype(dtype)
        self.params = {k: v.astype(self.dtype) for k, v in self.params.items()}
        return self

    # -- forward / backward -------------------------------------------------

    def _conv_forward(self, x, w, b):
        m = w.shape[0]
        cols, (ho, wo) = _im2col(x, 3, 3)
        wmat = w.reshape(m, -1)
        out = np.matmul(wmat, cols).reshape(x.shape[0], m, ho, wo)
        out += b.reshape(1, m, 1, 1)
        return out, cols

    def _conv_backward(self, dout, x_shape, cols, w):
        n, m = dout.shape[0], dout.shape[1]
        dmat = dout.reshape(n, m, -1)
        dw = np.matmul(dmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        db = dout.sum(axis=(0, 2, 3))
        dcols = np.matmul(w.reshape(m, -1).T, dmat)
        dx = _col2im(dcols, x_shape, 3, 3)
        return dx, dw, db

    _POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))

    @classmethod
    def _pool_forward(cls, x):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        quads = [x[:, :, i : ho * 2 : 2, j : wo * 2 : 2] for i, j in cls._POOL_OFFSETS]
        out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
        # first-match masks route each gradient to exactly one source cell
        masks = []
        claimed = np.zeros(out.shape, dtype=bool)
        for q in quads:
            m = (q == out) & ~claimed
            claimed |= m
            masks.append(m)
        return out, (masks, x.shape)

    @classmethod
    def _pool_backward(cls, dout, cache):
        masks, x_shape = cache
        _n, _c, h, w = x_shape
        ho, wo = h // 2, w // 2
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for mask, (i, j) in zip(masks, cls._POOL_OFFSETS):
            view = dx[:, :, i : ho * 2 : 2, j : wo * 2 : 2]
            np.copyto(view, dout, where=mask)
        return dx

    def forward(self, x, want_cache: bool = False):
        x = np.asarray(x, dtype=self.dtype)
        p = self.params
        c1, cols1 = self._conv_forward(x, p["W1"], p["b1"])
        r1 = np.maximum(c1, 0)
        p1, pc1 = self._pool_forward(r1)
        c2, cols2 = self._conv_forward(p1, p["W2"], p["b2"])
        r2 = np.maximum(c2, 0)
        p2, pc2 = self._pool_forward(r2)
        flat = p2.reshape(x.shape[0], -1)
        f1 = flat @ p["W3"] + p["b3"]
        r3 = np.maximum(f1, 0)
        logits = r3 @ p["W4"] + p["b4"]
        if not want_cache:
            return logits
        cache = dict(x=x, cols1=cols1, c1=c1, r1=r1, pc1=pc1, p1=p1, cols2=cols2,
                     c2=c2, r2=r2, pc2=pc2, p2=p2, flat=flat, f1=f1, r3=r3)
        return logits, cache

    def backward(self, dlogits, cache):
        p = self.params
        grads: dict[str, np.ndarray] = {}
        grads["W4"] = cache["r3"].T @ dlogits
        grads["b4"] = dlogits.sum(axis=0)
        dr3 = dlogits @ p["W4"].T
        df1 = dr3 * (cache["f1"] > 0)
        grads["W3"] = cache["flat"].T @ df1
        grads["b3"] = df1.sum(axis=0)
        dflat = df1 @ p["W3"].T
        dp2 = dflat.reshape(cache["p2"].shape)
        dr2 = self._pool_backward(dp2, cache["pc2"])
        dc2 = dr2 * (cache["c2"] > 0)
        dp1, grads["W2"], grads["b2"] = self._conv_backward(
            dc2, cache["p1"].shape, cache["cols2"], p["W2"]
        )
        dr1 = self._pool_backward(dp1, cache["pc1"])
        dc1 = dr1 * (cache["c1"] > 0)
        _, grads["W1"], grads["b1"] = self._conv_backward(
            dc1, cache["x"].shape, cache["cols1"], p["W1"]
        )
        return grads

    # -- losses ---------------------------------------------------------------

    def loss_and_grads(self, x, y, loss: str = "ce"):
        logits, cache = self.forward(x, want_cache=True)
        n = logits.shape[0]
        if loss == "ce":
            probs = softmax(logits)
            eps = np.finfo(np.float64).tiny
            value = float(-np.log(np.maximum(probs[np.arange(n), y], eps)).mean())
            dlogits = probs.astype(self.dtype).copy()
            dlogits[np.arange(n), y] -= 1.0
            dlogits /= n
        elif loss == "mse":
            target = np.zeros_like(logits)
            target[np.arange(n), y] = 1.0
            diff = logits - target
            value = float(0.5 * (diff * diff).sum() / n)
            dlogits = diff / n
        else:
            raise ValueError(f"unknown loss {loss!r}")
        grads = self.backward(dlogits.astype(self.dtype), cache)
        return value, grads, logits


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_arrays(dataset):
    if isinstance(dataset, ClassDataset):
        return dataset.to_arrays()
    x, y = dataset
    return np.asarray(x), np.asarray(y)


def train(net: SmallNet, dataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch SGD on softmax cross-entropy; per-epoch loss/accuracy."""
    x, y = _as_arrays(dataset)
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("dataset is empty or mismatched")
    counts = np.bincount(y, minlength=net.n_classes)
    if counts.min() != counts.max():
        raise ValueError(f"dataset is not balanced across classes: {counts.tolist()}")
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    result = TrainResult()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            xb, yb = x[sel], y[sel]
            loss, grads, logits = net.loss_and_grads(xb, yb)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss diverged at epoch {epoch}")
            for key, g in grads.items():
                net.params[key] -= (cfg.learning_rate * g).astype(net.dtype)
            epoch_loss += loss * len(sel)
            correct += int((logits.argmax(axis=1) == yb).sum())
        result.history.append(
            EpochStats(epoch=epoch, loss=epoch_loss / n, accuracy=correct / n)
        )
    return result


def evaluate(net: SmallNet, dataset, batch_size: int = 64):
    """Accuracy and a (true, predicted) confusion matrix."""
    x, y = _as_arrays(dataset)
    if x.shape[0] == 0:
        raise ValueError("dataset is empty")
    preds = []
    for start in range(0, x.shape[0], batch_size):
        logits = net.forward(x[start : start + batch_size])
        preds.append(logits.argmax(axis=1))
    pred = np.concatenate(preds)
    confusion = np.zeros((net.n_classes, net.n_classes), dtype=np.int64)
    for t, q in zip(y, pred):
        confusion[t, q] += 1
    return float((pred == y).mean()), confusion


def gradient_check(net: SmallNet, x, y, loss: str = "ce", h: float = 1e-4,
                   max_params_per_tensor: int = 40, seed: int = 0):
    """Analytic vs central-difference gradients in float64.

    Returns (max_relative_error, fraction_within_1e-3, worst_param_label).
    """
    net = net.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    _, grads, _ = net.loss_and_grads(x, y, loss=loss)
    rng = np.random.default_rng(seed)
    worst = (0.0, "")
    rels = []
    for key in sorted(net.params):
        param = net.params[key]
        flat_idx = np.arange(param.size)
        if param.size > max_params_per_tensor:
            flat_idx = rng.choice(param.size, size=max_params_per_tensor, replace=False)
        for idx in flat_idx:
            orig = param.flat[idx]
            param.flat[idx] = orig + h
            lp, _, _ = net.loss_and_grads(x, y, loss=loss)
            param.flat[idx] = orig - h
            lm, _, _ = net.loss_and_grads(x, y, loss=loss)
            param.flat[idx] = orig
            numeric = (lp - lm) / (2 * h)
            analytic = float(grads[key].flat[idx])
            denom = max(abs(numeric), abs(analytic), 1e-8)
            rel = abs(numeric - analytic) / denom
            rels.append(rel)
            if rel > worst[0]:
                worst = (rel, f"{key}[{idx}]")
    rels = np.asarray(rels)
    return float(rels.max()), float((rels <= 1e-3).mean()), worst[1]


# ---------------------------------------------------------------------------
# Bundle serialization
# ---------------------------------------------------------------------------

SMALLNET_PROBES = (
    ("relu1", 0.25, ProbeKind.EARLY),
    ("pool1", 0.40, ProbeKind.MIDDLE_EARLY),
    ("relu2", 0.60, ProbeKind.MIDDLE_LATE),
    ("pool2", 0.75, ProbeKind.LAST_CONV),
    ("logits", 1.00, ProbeKind.LAST_FC),
)


def to_graph(net: SmallNet) -> OnnxGraph:
    """Serialize with a channel-averaging stem so the graph takes RGB input."""
    p = {k: v.astype(np.float32) for k, v in net.params.items()}
    s = net.input_size
    g = OnnxGraph(name="smallnet")
    g.inputs.append(("input", (1, 3, s, s)))
    g.add_initializer("gray_w", np.full((1, 3, 1, 1), 1.0 / 3.0, dtype=np.float32))
    g.add_initializer("gray_b", np.zeros(1, dtype=np.float32))
    g.add_initializer("W1", p["W1"])
    g.add_initializer("b1", p["b1"])
    g.add_initializer("W2", p["W2"])
    g.add_initializer("b2", p["b2"])
    g.add_initializer("W3t", np.ascontiguousarray(p["W3"].T))
    g.add_initializer("b3", p["b3"])
    g.add_initializer("W4t", np.ascontiguousarray(p["W4"].T))
    g.add_initializer("b4", p["b4"])

    g.add_node("Conv", ["input", "gray_w", "gray_b"], ["gray"], name="gray")
    g.add_node("Conv", ["gray", "W1", "b1"], ["conv1"], name="conv1")
    g.add_node("Relu", ["conv1"], ["relu1"], name="relu1")
    g.add_node("MaxPool", ["relu1"], ["pool1"], name="pool1",
               kernel_shape=[2, 2], strides=[2, 2])
    g.add_node("Conv", ["pool1", "W2", "b2"], ["conv2"], name="conv2")
    g.add_node("Relu", ["conv2"], ["relu2"], name="relu2")
    g.add_node("MaxPool", ["relu2"], ["pool2"], name="pool2",
               kernel_shape=[2, 2], strides=[2, 2])
    g.add_node("Flatten", ["pool2"], ["flat"], name="flat", axis=1)
    g.add_node("Gemm", ["flat", "W3t", "b3"], ["fc1"], name="fc1", transB=1)
    g.add_node("Relu", ["fc1"], ["relu3"], name="relu3")
    g.add_node("Gemm", ["relu3", "W4t", "b4"], ["logits"], name="logits_gemm", transB=1)

    probe_dims = {
        "relu1": (1, p["W1"].shape[0], net.shapes["conv1"], net.shapes["conv1"]),
        "pool1": (1, p["W1"].shape[0], net.shapes["pool1"], net.shapes["pool1"]),
        "relu2": (1, p["W2"].shape[0], net.shapes["conv2"], net.shapes["conv2"]),
        "pool2": (1, p["W2"].shape[0], net.shapes["pool2"], net.shapes["pool2"]),
        "logits": (1, net.n_classes),
    }
    for name, _frac, _kind in SMALLNET_PROBES:
        g.outputs.append((name, probe_dims[name]))
    return g


def bundle_meta(net: SmallNet, name: str = "smallnet") -> BundleMeta:
    return BundleMeta(
        input_size=net.input_size,
        mean=(0.0, 0.0, 0.0),
        std=(1.0, 1.0, 1.0),
        probes=tuple(
            ProbeSpec(name=n, depth_fraction=f, kind=k) for n, f, k in SMALLNET_PROBES
        ),
        total_depth=4,
        name=name,
    )


def save_bundle(net: SmallNet, graph_path, name: str = "smallnet") -> str:
    return write_bundle(to_graph(net), bundle_meta(net, name=name), graph_path)
