"""Numpy evaluator for the feed-forward ONNX op subset.

Executes graphs produced by the bundled serializer (and by external
exporters restricted to the same op set): Conv, BatchNormalization, Relu,
pooling, Gemm/MatMul, elementwise arithmetic, Concat/Flatten/Reshape/
Transpose, Pad, Softmax, Clip, ReduceMean, Identity/Dropout. Convolution
uses im2col + BLAS matmul; pooling loops over kernel offsets with strided
slices. All compute is float32, single-threaded apart from BLAS, and
deterministic: the same graph and feeds produce bit-identical outputs.
"""

from __future__ import annotations

import math

import numpy as np

from .onnx_io import OnnxGraph, OnnxNode


class InferenceError(RuntimeError):
    """Raised on unsupported ops, missing feeds, or shape mismatches."""


def _pair(value, default):
    if value is None:
        return list(default)
    return [int(v) for v in value]


def _pads4(value):
    if value is None:
        return 0, 0, 0, 0
    p = [int(v) for v in value]
    if len(p) == 2:  # (h, w) symmetric
        return p[0], p[1], p[0], p[1]
    if len(p) == 4:  # onnx order: h_begin, w_begin, h_end, w_end
        return p[0], p[1], p[2], p[3]
    raise InferenceError(f"unsupported pads {value}")


def _conv(node: OnnxNode, x, w, b=None):
    group = int(node.attrs.get("group", 1))
    kh, kw = w.shape[2], w.shape[3]
    sh, sw = _pair(node.attrs.get("strides"), (1, 1))
    dh, dw = _pair(node.attrs.get("dilations"), (1, 1))
    ph0, pw0, ph1, pw1 = _pads4(node.attrs.get("pads"))
    n, c, h, wd = x.shape
    m, c_per_g = w.shape[0], w.shape[1]
    if c != c_per_g * group:
        raise InferenceError(
            f"conv channel mismatch: input {c}, weights {c_per_g}x{group} groups"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1))) if (ph0 or ph1 or pw0 or pw1) else x
    hp, wp = xp.shape[2], xp.shape[3]
    eff_kh, eff_kw = (kh - 1) * dh + 1, (kw - 1) * dw + 1
    ho = (hp - eff_kh) // sh + 1
    wo = (wp - eff_kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise InferenceError(f"conv output collapsed: input {x.shape}, kernel {w.shape}")
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[
                :, :, i * dh : i * dh + ho * sh : sh, j * dw : j * dw + wo * sw : sw
            ]
    cols = cols.reshape(n, group, c_per_g * kh * kw, ho * wo)
    wg = w.reshape(group, m // group, c_per_g * kh * kw)
    pieces = [np.matmul(wg[g], cols[:, g]) for g in range(group)]
    out = np.concatenate(pieces, axis=1).reshape(n, m, ho, wo)
    if b is not None:
        out = out + b.reshape(1, m, 1, 1)
    return out


def _pool_dims(h, w, kh, kw, sh, sw, ph0, pw0, ph1, pw1, ceil_mode):
    def extent(size, pad0, pad1, k, s):
        raw = (size + pad0 + pad1 - k) / s
        n_out = math.ceil(raw) if ceil_mode else math.floor(raw)
        n_out += 1
        if ceil_mode:
            # last window must start inside the (begin-padded) input
            if (n_out - 1) * s >= size + pad0:
                n_out -= 1
        return n_out

    return extent(h, ph0, ph1, kh, sh), extent(w, pw0, pw1, kw, sw)


def _maxpool(node: OnnxNode, x):
    kh, kw = _pair(node.attrs["kernel_shape"], None)
    sh, sw = _pair(node.attrs.get("strides"), (kh, kw))
    dh, dw = _pair(node.attrs.get("dilations"), (1, 1))
    if (dh, dw) != (1, 1):
        raise InferenceError("dilated pooling is not supported")
    ph0, pw0, ph1, pw1 = _pads4(node.attrs.get("pads"))
    ceil_mode = bool(node.attrs.get("ceil_mode", 0))
    n, c, h, w = x.shape
    ho, wo = _pool_dims(h, w, kh, kw, sh, sw, ph0, pw0, ph1, pw1, ceil_mode)
    need_h = (ho - 1) * sh + kh
    need_w = (wo - 1) * sw + kw
    extra_h = max(0, need_h - (h + ph0 + ph1))
    extra_w = max(0, need_w - (w + pw0 + pw1))
    xp = np.pad(
        x,
        ((0, 0), (0, 0), (ph0, ph1 + extra_h), (pw0, pw1 + extra_w)),
        constant_values=-np.inf,
    )
    out = np.full((n, c, ho, wo), -np.inf, dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            np.maximum(out, xp[:, :, i : i + ho * sh : sh, j : j + wo * sw : sw], out=out)
    return out


def _avgpool(node: OnnxNode, x):
    kh, kw = _pair(node.attrs["kernel_shape"], None)
    sh, sw = _pair(node.attrs.get("strides"), (kh, kw))
    ph0, pw0, ph1, pw1 = _pads4(node.attrs.get("pads"))
    ceil_mode = bool(node.attrs.get("ceil_mode", 0))
    include_pad = bool(node.attrs.get("count_include_pad", 0))
    n, c, h, w = x.shape
    ho, wo = _pool_dims(h, w, kh, kw, sh, sw, ph0, pw0, ph1, pw1, ceil_mode)
    need_h = (ho - 1) * sh + kh
    need_w = (wo - 1) * sw + kw
    extra_h = max(0, need_h - (h + ph0 + ph1))
    extra_w = max(0, need_w - (w + pw0 + pw1))
    xp = np.pad(x, ((0, 0), (0, 0), (ph0, ph1 + extra_h), (pw0, pw1 + extra_w)))
    total = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            total += xp[:, :, i : i + ho * sh : sh, j : j + wo * sw : sw]
    if include_pad:
        return total / np.float32(kh * kw)
    ones = np.pad(
        np.ones((h, w), dtype=x.dtype), ((ph0, ph1 + extra_h), (pw0, pw1 + extra_w))
    )
    counts = np.zeros((ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            counts += ones[i : i + ho * sh : sh, j : j + wo * sw : sw]
    return total / counts


def _batchnorm(node: OnnxNode, x, scale, bias, mean, var):
    eps = np.float32(node.attrs.get("epsilon", 1e-5))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    inv = 1.0 / np.sqrt(var.reshape(shape) + eps)
    return (x - mean.reshape(shape)) * inv * scale.reshape(shape) + bias.reshape(shape)


def _gemm(node: OnnxNode, a, b, c=None):
    alpha = np.float32(node.attrs.get("alpha", 1.0))
    beta = np.float32(node.attrs.get("beta", 1.0))
    if node.attrs.get("transA", 0):
        a = a.T
    if node.attrs.get("transB", 0):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out


def _flatten(node: OnnxNode, x):
    axis = int(node.attrs.get("axis", 1))
    if axis < 0:
        axis += x.ndim
    lead = int(np.prod(x.shape[:axis], dtype=np.int64)) if axis else 1
    return np.ascontiguousarray(x).reshape(lead, -1)


def _reshape(node: OnnxNode, x, shape):
    target = []
    for i, s in enumerate(np.asarray(shape).astype(np.int64).tolist()):
        target.append(x.shape[i] if s == 0 else int(s))
    return np.ascontiguousarray(x).reshape(target)


def _softmax(node: OnnxNode, x):
    axis = int(node.attrs.get("axis", -1))
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _pad_op(node: OnnxNode, x, pads=None, value=None):
    mode = node.attrs.get("mode", "constant")
    if isinstance(mode, bytes):
        mode = mode.decode()
    if mode != "constant":
        raise InferenceError(f"unsupported pad mode {mode!r}")
    raw = pads if pads is not None else node.attrs.get("pads")
    raw = np.asarray(raw).astype(np.int64).tolist()
    rank = x.ndim
    before, after = raw[:rank], raw[rank:]
    cval = 0.0 if value is None else float(np.asarray(value).reshape(-1)[0])
    return np.pad(
        x, list(zip(before, after)), constant_values=np.float32(cval)
    )


def _reduce_mean(node: OnnxNode, x):
    axes = node.attrs.get("axes")
    keep = bool(node.attrs.get("keepdims", 1))
    axes_t = tuple(int(a) for a in axes) if axes is not None else None
    return x.mean(axis=axes_t, keepdims=keep)


def _clip(node: OnnxNode, x, lo=None, hi=None):
    lo = node.attrs.get("min") if lo is None else float(np.asarray(lo).reshape(()))
    hi = node.attrs.get("max") if hi is None else float(np.asarray(hi).reshape(()))
    return np.clip(x, lo, hi)


def evaluate(graph: OnnxGraph, feeds: dict[str, np.ndarray],
             wanted: list[str] | None = None) -> dict[str, np.ndarray]:
    """Run the graph on feeds and return the wanted tensors.

    ``wanted`` defaults to the graph's declared outputs. Inputs are cast to
    float32; every feed named by the graph must be present.
    """
    if wanted is None:
        wanted = [n for n, _ in graph.outputs]
    else:
        wanted = list(wanted)
    values: dict[str, np.ndarray] = {}
    for name, arr in graph.initializers.items():
        values[name] = arr
    for name in graph.feed_names():
        if name not in feeds:
            raise InferenceError(f"missing input feed {name!r}")
    for name, arr in feeds.items():
        arr = np.asarray(arr)
        if arr.dtype in (np.float64, np.float16):
            arr = arr.astype(np.float32)
        values[name] = arr

    produced = graph.produced_names()
    for want in wanted:
        if want not in produced:
            raise InferenceError(f"requested tensor {want!r} is not produced by the graph")

    # last-use bookkeeping so big intermediates are dropped promptly
    keep = set(wanted)
    last_use: dict[str, int] = {}
    for idx, node in enumerate(graph.nodes):
        for name in node.inputs:
            if name:
                last_use[name] = idx

    for idx, node in enumerate(graph.nodes):
        args = []
        for name in node.inputs:
            if not name:
                args.append(None)
                continue
            if name not in values:
                raise InferenceError(
                    f"node {node.name!r} ({node.op_type}) input {name!r} not computed; "
                    "graph is not topologically ordered"
                )
            args.append(values[name])
        outs = _dispatch(node, args)
        for out_name, out_val in zip(node.outputs, outs):
            if out_name:
                values[out_name] = out_val
        for name in set(node.inputs):
            if name and last_use.get(name) == idx and name not in keep:
                if name not in graph.initializers:
                    values.pop(name, None)
    missing = [w for w in wanted if w not in values]
    if missing:
        raise InferenceError(f"outputs never produced: {missing}")
    return {w: values[w] for w in wanted}


def _dispatch(node: OnnxNode, args) -> list[np.ndarray]:
    op = node.op_type
    try:
        if op == "Conv":
            return [_conv(node, *args)]
        if op == "Relu":
            return [np.maximum(args[0], 0)]
        if op == "MaxPool":
            return [_maxpool(node, args[0])]
        if op == "AveragePool":
            return [_avgpool(node, args[0])]
        if op == "GlobalAveragePool":
            return [args[0].mean(axis=(2, 3), keepdims=True)]
        if op == "BatchNormalization":
            return [_batchnorm(node, *args[:5])]
        if op == "Gemm":
            return [_gemm(node, *args)]
        if op == "MatMul":
            return [args[0] @ args[1]]
        if op == "Add":
            return [args[0] + args[1]]
        if op == "Sub":
            return [args[0] - args[1]]
        if op == "Mul":
            return [args[0] * args[1]]
        if op == "Div":
            return [args[0] / args[1]]
        if op == "Concat":
            axis = int(node.attrs["axis"])
            return [np.concatenate([a for a in args if a is not None], axis=axis)]
        if op == "Flatten":
            return [_flatten(node, args[0])]
        if op == "Reshape":
            return [_reshape(node, args[0], args[1])]
        if op == "Transpose":
            perm = node.attrs.get("perm")
            return [np.transpose(args[0], axes=perm)]
        if op == "Softmax":
            return [_softmax(node, args[0])]
        if op in ("Identity", "Dropout"):
            return [args[0]]
        if op == "Pad":
            return [_pad_op(node, *args)]
        if op == "ReduceMean":
            return [_reduce_mean(node, args[0])]
        if op == "Clip":
            return [_clip(node, *args)]
        if op == "Constant":
            return [np.asarray(node.attrs["value"])]
        if op == "Sigmoid":
            return [1.0 / (1.0 + np.exp(-args[0]))]
    except InferenceError:
        raise
    except Exception as exc:
        raise InferenceError(f"node {node.name!r} ({op}) failed: {exc}") from exc
    raise InferenceError(f"unsupported op type {op!r} (node {node.name!r})")
