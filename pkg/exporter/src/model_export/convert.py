"""Torch module -> ONNX-subset graph conversion via torch.fx tracing.

Symbolically traces the model, propagates static shapes from a dummy input,
and maps each fx node onto the op subset the probing runner evaluates
(Conv, BatchNormalization, Relu, pooling, Gemm, Concat, Flatten, ...).
Tensor names in the exported graph are the fx node names, which keeps them
unique even when a module object (a reused ReLU, say) appears several times
in the trace. Intermediate probe tensors are exposed as extra graph outputs.
"""

from __future__ import annotations

import operator

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.fx import symbolic_trace
from torch.fx.passes.shape_prop import ShapeProp

from gestalt_probe.onnx_io import OnnxGraph

INPUT_NAME = "input"


class ConversionError(RuntimeError):
    pass


def _npf(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


def _pair(v):
    if isinstance(v, (tuple, list)):
        return [int(v[0]), int(v[1])]
    return [int(v), int(v)]


def _shape_of(node) -> tuple[int, ...]:
    meta = node.meta.get("tensor_meta")
    if meta is None:
        raise ConversionError(f"node {node.name} has no propagated shape")
    return tuple(int(d) for d in meta.shape)


class _Converter:
    def __init__(self, gm, graph_name: str):
        self.gm = gm
        self.g = OnnxGraph(name=graph_name)
        self.names: dict = {}  # fx node -> tensor name
        self.conv_nodes: list[str] = []   # conv output tensor names, topo order
        self.gemm_nodes: list[str] = []
        self.relu_outputs: set[str] = set()
        self.unary_next: dict[str, str] = {}  # tensor -> following bn/relu output

    # -- initializer helpers --------------------------------------------------

    def _init(self, name: str, tensor) -> str:
        arr = tensor if isinstance(tensor, np.ndarray) else _npf(tensor)
        self.g.add_initializer(name, arr)
        return name

    def _shape_init(self, name: str, dims) -> str:
        self.g.add_initializer(name, np.asarray(dims, dtype=np.int64))
        return name

    # -- module mappers ---------------------------------------------------------

    def _map_conv(self, node, mod: nn.Conv2d):
        x = self.names[node.args[0]]
        out = node.name
        w = self._init(f"{out}.weight", mod.weight)
        inputs = [x, w]
        if mod.bias is not None:
            inputs.append(self._init(f"{out}.bias", mod.bias))
        ph, pw = _pair(mod.padding)
        self.g.add_node(
            "Conv", inputs, [out], name=out,
            strides=_pair(mod.stride), pads=[ph, pw, ph, pw],
            dilations=_pair(mod.dilation), group=int(mod.groups),
        )
        self.conv_nodes.append(out)
        return out

    def _map_bn(self, node, mod: nn.BatchNorm2d):
        x = self.names[node.args[0]]
        out = node.name
        c = mod.num_features
        weight = mod.weight if mod.affine else torch.ones(c)
        bias = mod.bias if mod.affine else torch.zeros(c)
        self.g.add_node(
            "BatchNormalization",
            [x, self._init(f"{out}.scale", weight), self._init(f"{out}.bias", bias),
             self._init(f"{out}.mean", mod.running_mean),
             self._init(f"{out}.var", mod.running_var)],
            [out], name=out, epsilon=float(mod.eps),
        )
        self.unary_next[x] = out
        return out

    def _map_maxpool(self, node, kernel, stride, padding, dilation, ceil_mode):
        x = self.names[node.args[0]]
        out = node.name
        if _pair(dilation) != [1, 1]:
            raise ConversionError(f"{node.name}: dilated max-pooling unsupported")
        ph, pw = _pair(padding)
        self.g.add_node(
            "MaxPool", [x], [out], name=out,
            kernel_shape=_pair(kernel),
            strides=_pair(stride if stride is not None else kernel),
            pads=[ph, pw, ph, pw], ceil_mode=int(bool(ceil_mode)),
        )
        return out

    def _map_avgpool(self, node, kernel, stride, padding, ceil_mode, count_include_pad):
        x = self.names[node.args[0]]
        out = node.name
        ph, pw = _pair(padding)
        self.g.add_node(
            "AveragePool", [x], [out], name=out,
            kernel_shape=_pair(kernel),
            strides=_pair(stride if stride is not None else kernel),
            pads=[ph, pw, ph, pw], ceil_mode=int(bool(ceil_mode)),
            count_include_pad=int(bool(count_include_pad)),
        )
        return out

    def _map_adaptive_avgpool(self, node, output_size):
        in_shape = _shape_of(node.args[0])
        oh, ow = _pair(output_size)
        ih, iw = in_shape[2], in_shape[3]
        x = self.names[node.args[0]]
        out = node.name
        if (oh, ow) == (1, 1):
            self.g.add_node("GlobalAveragePool", [x], [out], name=out)
        elif (oh, ow) == (ih, iw):
            self.g.add_node("Identity", [x], [out], name=out)
        elif ih % oh == 0 and iw % ow == 0:
            kh, kw = ih // oh, iw // ow
            self.g.add_node("AveragePool", [x], [out], name=out,
                            kernel_shape=[kh, kw], strides=[kh, kw],
                            pads=[0, 0, 0, 0], count_include_pad=1)
        else:
            raise ConversionError(
                f"{node.name}: adaptive pool {in_shape} -> {(oh, ow)} unsupported"
            )
        return out

    def _map_linear(self, node, mod: nn.Linear):
        x = self.names[node.args[0]]
        out = node.name
        inputs = [x, self._init(f"{out}.weight", mod.weight)]
        if mod.bias is not None:
            inputs.append(self._init(f"{out}.bias", mod.bias))
        self.g.add_node("Gemm", inputs, [out], name=out, transB=1)
        self.gemm_nodes.append(out)
        return out

    def _map_flatten(self, node, start_dim, end_dim=-1):
        if end_dim not in (-1, None):
            raise ConversionError(f"{node.name}: flatten end_dim={end_dim} unsupported")
        x = self.names[node.args[0]]
        out = node.name
        self.g.add_node("Flatten", [x], [out], name=out, axis=int(start_dim))
        return out

    def _map_reshape(self, node):
        # static target shape from propagated metadata; batch dim kept symbolic
        out_shape = _shape_of(node)
        dims = [0] + [int(d) for d in out_shape[1:]]
        x = self.names[node.args[0]]
        out = node.name
        shape_name = self._shape_init(f"{out}.shape", dims)
        self.g.add_node("Reshape", [x, shape_name], [out], name=out)
        return out

    def _map_identity(self, node):
        x = self.names[node.args[0]]
        out = node.name
        self.g.add_node("Identity", [x], [out], name=out)
        return out

    def _map_relu(self, node):
        x = self.names[node.args[0]]
        out = node.name
        self.g.add_node("Relu", [x], [out], name=out)
        self.unary_next[x] = out
        self.relu_outputs.add(out)
        return out

    # -- dispatch ----------------------------------------------------------------

    def convert_call_module(self, node):
        mod = self.gm.get_submodule(node.target)
        if isinstance(mod, nn.Conv2d):
            return self._map_conv(node, mod)
        if isinstance(mod, (nn.BatchNorm2d,)):
            return self._map_bn(node, mod)
        if isinstance(mod, nn.ReLU):
            return self._map_relu(node)
        if isinstance(mod, nn.MaxPool2d):
            return self._map_maxpool(node, mod.kernel_size, mod.stride, mod.padding,
                                     mod.dilation, mod.ceil_mode)
        if isinstance(mod, nn.AvgPool2d):
            return self._map_avgpool(node, mod.kernel_size, mod.stride, mod.padding,
                                     mod.ceil_mode, mod.count_include_pad)
        if isinstance(mod, nn.AdaptiveAvgPool2d):
            return self._map_adaptive_avgpool(node, mod.output_size)
        if isinstance(mod, nn.Linear):
            return self._map_linear(node, mod)
        if isinstance(mod, (nn.Dropout, nn.Identity)):
            return self._map_identity(node)
        if isinstance(mod, nn.Flatten):
            return self._map_flatten(node, mod.start_dim, mod.end_dim)
        raise ConversionError(f"unsupported module {type(mod).__name__} at {node.target}")

    def convert_call_function(self, node):
        fn = node.target
        if fn in (operator.add, torch.add):
            a = self.names[node.args[0]]
            b = self.names[node.args[1]]
            out = node.name
            self.g.add_node("Add", [a, b], [out], name=out)
            return out
        if fn is torch.cat:
            tensors = node.args[0]
            dim = node.args[1] if len(node.args) > 1 else node.kwargs.get("dim", 0)
            ins = [self.names[t] for t in tensors]
            out = node.name
            self.g.add_node("Concat", ins, [out], name=out, axis=int(dim))
            return out
        if fn is torch.flatten:
            start = node.args[1] if len(node.args) > 1 else node.kwargs.get("start_dim", 0)
            end = node.args[2] if len(node.args) > 2 else node.kwargs.get("end_dim", -1)
            return self._map_flatten(node, start, end)
        if fn is F.relu:
            return self._map_relu(node)
        if fn is F.max_pool2d:
            kwargs = dict(node.kwargs)
            args = list(node.args[1:])
            def take(name, default=None):
                if args:
                    return args.pop(0)
                return kwargs.get(name, default)
            kernel = take("kernel_size")
            stride = take("stride")
            padding = take("padding", 0)
            dilation = take("dilation", 1)
            ceil_mode = take("ceil_mode", False)
            return self._map_maxpool(node, kernel, stride, padding, dilation, ceil_mode)
        if fn is F.avg_pool2d:
            kwargs = dict(node.kwargs)
            args = list(node.args[1:])
            def take(name, default=None):
                if args:
                    return args.pop(0)
                return kwargs.get(name, default)
            kernel = take("kernel_size")
            stride = take("stride")
            padding = take("padding", 0)
            ceil_mode = take("ceil_mode", False)
            take("count_include_pad", True)
            return self._map_avgpool(node, kernel, stride, padding, ceil_mode,
                                     kwargs.get("count_include_pad", True))
        if fn is F.adaptive_avg_pool2d:
            return self._map_adaptive_avgpool(node, node.args[1])
        if fn is F.dropout:
            return self._map_identity(node)
        raise ConversionError(f"unsupported function {fn} at {node.name}")

    def convert_call_method(self, node):
        method = node.target
        if method in ("view", "reshape"):
            return self._map_reshape(node)
        if method == "flatten":
            start = node.args[1] if len(node.args) > 1 else node.kwargs.get("start_dim", 0)
            return self._map_flatten(node, start)
        if method == "contiguous":
            return self._map_identity(node)
        if method == "mean":
            dims = node.args[1] if len(node.args) > 1 else node.kwargs.get("dim")
            keep = node.kwargs.get("keepdim", False)
            x = self.names[node.args[0]]
            out = node.name
            axes = [int(d) for d in (dims if isinstance(dims, (tuple, list)) else [dims])]
            self.g.add_node("ReduceMean", [x], [out], name=out, axes=axes,
                            keepdims=int(bool(keep)))
            return out
        raise ConversionError(f"unsupported method {method} at {node.name}")


def convert_model(model: nn.Module, input_size: int, graph_name: str = "model"):
    """Trace and convert; returns (graph, trace_info).

    trace_info carries the fx GraphModule plus conv/gemm tensor-name lists and
    the conv->relu adjacency used for probe placement.
    """
    model = model.eval()
    gm = symbolic_trace(model)
    example = torch.zeros(1, 3, input_size, input_size)
    ShapeProp(gm).propagate(example)

    conv = _Converter(gm, graph_name)
    output_node = None
    for node in gm.graph.nodes:
        if node.op == "placeholder":
            conv.names[node] = INPUT_NAME
            conv.g.inputs.append((INPUT_NAME, (1, 3, input_size, input_size)))
        elif node.op == "call_module":
            conv.names[node] = conv.convert_call_module(node)
        elif node.op == "call_function":
            conv.names[node] = conv.convert_call_function(node)
        elif node.op == "call_method":
            conv.names[node] = conv.convert_call_method(node)
        elif node.op == "get_attr":
            tensor = gm
            for part in node.target.split("."):
                tensor = getattr(tensor, part)
            conv.names[node] = conv._init(node.name, tensor)
        elif node.op == "output":
            output_node = node
        else:
            raise ConversionError(f"unsupported fx op {node.op}")

    if output_node is None:
        raise ConversionError("traced graph has no output node")
    result = output_node.args[0]
    if isinstance(result, (tuple, list)):
        raise ConversionError("multi-output models are not supported")
    final_name = conv.names[result]
    conv.g.outputs.append((final_name, _shape_of(result)))
    info = {
        "graph_module": gm,
        "final_output": final_name,
        "conv_outputs": conv.conv_nodes,
        "gemm_outputs": conv.gemm_nodes,
        "relu_outputs": conv.relu_outputs,
        "unary_next": conv.unary_next,
    }
    return conv.g, info


def post_activation(info, tensor_name: str) -> str:
    """Follow conv -> (bn) -> relu unary chains to the post-nonlinearity tensor.

    Activations are probed after the nonlinearity when one directly follows;
    a bare conv/bn output is returned unchanged.
    """
    name = tensor_name
    for _ in range(3):
        nxt = info["unary_next"].get(name)
        if nxt is None:
            return name
        name = nxt
        if name in info["relu_outputs"]:
            return name
    return name
