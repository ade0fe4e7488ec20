"""Self-contained ONNX graph reader/writer (protobuf wire format).

Implements the subset of the ONNX ModelProto schema needed to serialize and
load feed-forward vision graphs: nodes with scalar/list/tensor attributes,
float32/int64 initializers (raw_data encoding), and value-info shapes for
graph inputs/outputs. Field numbers follow onnx.proto, so files written here
load in stock ONNX tooling and vice versa for graphs restricted to this
subset. No protobuf runtime is required.

Wire format recap: each field is a varint key ``(field_number << 3) | wire
type`` followed by a varint (type 0), 8 bytes (type 1), a length-delimited
payload (type 2), or 4 bytes (type 5). Repeated numeric fields are accepted
in both packed and unpacked encodings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

IR_VERSION = 8
DEFAULT_OPSET = 13

# TensorProto.DataType values from onnx.proto.
DT_FLOAT = 1
DT_INT32 = 6
DT_INT64 = 7
DT_DOUBLE = 11

_NUMPY_TO_DT = {np.dtype(np.float32): DT_FLOAT, np.dtype(np.int64): DT_INT64}
_DT_TO_NUMPY = {
    DT_FLOAT: np.dtype(np.float32),
    DT_INT32: np.dtype(np.int32),
    DT_INT64: np.dtype(np.int64),
    DT_DOUBLE: np.dtype(np.float64),
}

# AttributeProto.AttributeType values.
AT_FLOAT, AT_INT, AT_STRING, AT_TENSOR = 1, 2, 3, 4
AT_FLOATS, AT_INTS, AT_STRINGS = 6, 7, 8


class OnnxFormatError(ValueError):
    """Raised when a file cannot be parsed as the supported ONNX subset."""


# ---------------------------------------------------------------------------
# Varint / field primitives
# ---------------------------------------------------------------------------

def _encode_varint(value: int) -> bytes:
    if value < 0:
        value &= (1 << 64) - 1
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _decode_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise OnnxFormatError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise OnnxFormatError("varint too long")


def _as_signed64(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def _tag(field_num: int, wire: int) -> bytes:
    return _encode_varint((field_num << 3) | wire)


def _f_varint(field_num: int, value: int) -> bytes:
    return _tag(field_num, 0) + _encode_varint(int(value))


def _f_bytes(field_num: int, data: bytes) -> bytes:
    return _tag(field_num, 2) + _encode_varint(len(data)) + data


def _f_string(field_num: int, text: str) -> bytes:
    return _f_bytes(field_num, text.encode("utf-8"))


def _f_float(field_num: int, value: float) -> bytes:
    return _tag(field_num, 5) + struct.pack("<f", float(value))


def _iter_fields(buf: bytes):
    pos = 0
    while pos < len(buf):
        key, pos = _decode_varint(buf, pos)
        field_num, wire = key >> 3, key & 0x7
        if wire == 0:
            value, pos = _decode_varint(buf, pos)
        elif wire == 1:
            value, pos = buf[pos : pos + 8], pos + 8
        elif wire == 2:
            length, pos = _decode_varint(buf, pos)
            value, pos = buf[pos : pos + length], pos + length
        elif wire == 5:
            value, pos = buf[pos : pos + 4], pos + 4
        else:
            raise OnnxFormatError(f"unsupported wire type {wire}")
        yield field_num, wire, value


def _repeated_varints(wire: int, value) -> list[int]:
    """A repeated int field arrives packed (bytes) or one value at a time."""
    if wire == 0:
        return [value]
    out = []
    pos = 0
    while pos < len(value):
        v, pos = _decode_varint(value, pos)
        out.append(v)
    return out


# ---------------------------------------------------------------------------
# IR
# ---------------------------------------------------------------------------

@dataclass
class OnnxNode:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attrs: dict = field(default_factory=dict)


@dataclass
class OnnxGraph:
    name: str = "graph"
    nodes: list[OnnxNode] = field(default_factory=list)
    initializers: dict[str, np.ndarray] = field(default_factory=dict)
    inputs: list[tuple[str, tuple]] = field(default_factory=list)
    outputs: list[tuple[str, tuple]] = field(default_factory=list)

    def feed_names(self) -> list[str]:
        return [name for name, _ in self.inputs if name not in self.initializers]

    def produced_names(self) -> set[str]:
        out = set(self.initializers)
        out.update(name for name, _ in self.inputs)
        for node in self.nodes:
            out.update(o for o in node.outputs if o)
        return out

    def add_node(self, op_type: str, inputs, outputs, name: str = "", **attrs) -> None:
        self.nodes.append(
            OnnxNode(
                op_type=op_type,
                inputs=list(inputs),
                outputs=list(outputs),
                name=name or f"{op_type.lower()}_{len(self.nodes)}",
                attrs=attrs,
            )
        )

    def add_initializer(self, name: str, array: np.ndarray) -> None:
        arr = np.ascontiguousarray(array)
        if arr.dtype not in _NUMPY_TO_DT:
            raise OnnxFormatError(f"unsupported initializer dtype {arr.dtype} for {name!r}")
        self.initializers[name] = arr


# ---------------------------------------------------------------------------
# Writer
# ---------------------------------------------------------------------------

def _tensor_bytes(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    try:
        dt = _NUMPY_TO_DT[arr.dtype]
    except KeyError:
        raise OnnxFormatError(f"unsupported tensor dtype {arr.dtype}") from None
    out = b"".join(_f_varint(1, d) for d in arr.shape)
    out += _f_varint(2, dt)
    if name:
        out += _f_string(8, name)
    out += _f_bytes(9, arr.tobytes())
    return out


def _attr_bytes(name: str, value) -> bytes:
    out = _f_string(1, name)
    if isinstance(value, bool):
        raise OnnxFormatError(f"ambiguous bool attribute {name!r}; use int")
    if isinstance(value, (int, np.integer)):
        out += _f_varint(3, int(value)) + _f_varint(20, AT_INT)
    elif isinstance(value, float):
        out += _f_float(2, value) + _f_varint(20, AT_FLOAT)
    elif isinstance(value, str):
        out += _f_bytes(4, value.encode("utf-8")) + _f_varint(20, AT_STRING)
    elif isinstance(value, np.ndarray):
        out += _f_bytes(5, _tensor_bytes("", value)) + _f_varint(20, AT_TENSOR)
    elif isinstance(value, (list, tuple)):
        if all(isinstance(v, (int, np.integer)) for v in value):
            packed = b"".join(_encode_varint(int(v)) for v in value)
            out += _f_bytes(8, packed) + _f_varint(20, AT_INTS)
        elif all(isinstance(v, (float, np.floating)) for v in value):
            packed = b"".join(struct.pack("<f", float(v)) for v in value)
            out += _f_bytes(7, packed) + _f_varint(20, AT_FLOATS)
        elif all(isinstance(v, str) for v in value):
            for v in value:
                out += _f_bytes(9, v.encode("utf-8"))
            out += _f_varint(20, AT_STRINGS)
        else:
            raise OnnxFormatError(f"mixed-type list attribute {name!r}")
    else:
        raise OnnxFormatError(f"unsupported attribute type {type(value)} for {name!r}")
    return out


def _node_bytes(node: OnnxNode) -> bytes:
    out = b"".join(_f_string(1, i) for i in node.inputs)
    out += b"".join(_f_string(2, o) for o in node.outputs)
    if node.name:
        out += _f_string(3, node.name)
    out += _f_string(4, node.op_type)
    for key in sorted(node.attrs):
        out += _f_bytes(5, _attr_bytes(key, node.attrs[key]))
    return out


def _value_info_bytes(name: str, dims: tuple) -> bytes:
    shape = b""
    for d in dims:
        if isinstance(d, str):
            dim_msg = _f_string(2, d)
        else:
            dim_msg = _f_varint(1, int(d))
        shape += _f_bytes(1, dim_msg)
    tensor_type = _f_varint(1, DT_FLOAT) + _f_bytes(2, shape)
    type_proto = _f_bytes(1, tensor_type)
    return _f_string(1, name) + _f_bytes(2, type_proto)


def graph_to_bytes(graph: OnnxGraph) -> bytes:
    out = b"".join(_f_bytes(1, _node_bytes(n)) for n in graph.nodes)
    out += _f_string(2, graph.name)
    for name, arr in graph.initializers.items():
        out += _f_bytes(5, _tensor_bytes(name, arr))
    for name, dims in graph.inputs:
        out += _f_bytes(11, _value_info_bytes(name, dims))
    for name, dims in graph.outputs:
        out += _f_bytes(12, _value_info_bytes(name, dims))
    return out


def model_to_bytes(graph: OnnxGraph, opset: int = DEFAULT_OPSET,
                   producer: str = "gestalt-probe") -> bytes:
    opset_msg = _f_string(1, "") + _f_varint(2, opset)
    return (
        _f_varint(1, IR_VERSION)
        + _f_string(2, producer)
        + _f_string(3, "0.1")
        + _f_bytes(7, graph_to_bytes(graph))
        + _f_bytes(8, opset_msg)
    )


def save_model(graph: OnnxGraph, path, opset: int = DEFAULT_OPSET,
               producer: str = "gestalt-probe") -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(graph, opset=opset, producer=producer))


# ---------------------------------------------------------------------------
# Reader
# ---------------------------------------------------------------------------

def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    data_type = None
    name = ""
    raw = None
    float_data: list[float] = []
    int_data: list[int] = []
    double_data: list[float] = []
    for field_num, wire, value in _iter_fields(buf):
        if field_num == 1:
            dims.extend(_as_signed64(v) for v in _repeated_varints(wire, value))
        elif field_num == 2:
            data_type = value
        elif field_num == 4:
            if wire == 5:
                float_data.append(struct.unpack("<f", value)[0])
            else:
                float_data.extend(
                    v[0] for v in struct.iter_unpack("<f", value)
                )
        elif field_num in (5, 7):
            int_data.extend(_as_signed64(v) for v in _repeated_varints(wire, value))
        elif field_num == 8:
            name = value.decode("utf-8")
        elif field_num == 9:
            raw = value
        elif field_num == 10:
            if wire == 1:
                double_data.append(struct.unpack("<d", value)[0])
            else:
                double_data.extend(v[0] for v in struct.iter_unpack("<d", value))
    if data_type not in _DT_TO_NUMPY:
        raise OnnxFormatError(f"unsupported tensor data_type {data_type} in {name!r}")
    dtype = _DT_TO_NUMPY[data_type]
    shape = tuple(dims)
    if raw is not None:
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    elif float_data:
        arr = np.asarray(float_data, dtype=dtype).reshape(shape)
    elif double_data:
        arr = np.asarray(double_data, dtype=dtype).reshape(shape)
    elif int_data:
        arr = np.asarray(int_data, dtype=dtype).reshape(shape)
    else:
        arr = np.zeros(shape, dtype=dtype)
    return name, arr


def _parse_attr(buf: bytes) -> tuple[str, object]:
    name = ""
    single_f = single_i = single_s = tensor = None
    floats: list[float] = []
    ints: list[int] = []
    strings: list[str] = []
    for field_num, wire, value in _iter_fields(buf):
        if field_num == 1:
            name = value.decode("utf-8")
        elif field_num == 2:
            single_f = struct.unpack("<f", value)[0]
        elif field_num == 3:
            single_i = _as_signed64(value)
        elif field_num == 4:
            single_s = value.decode("utf-8")
        elif field_num == 5:
            tensor = _parse_tensor(value)[1]
        elif field_num == 7:
            if wire == 5:
                floats.append(struct.unpack("<f", value)[0])
            else:
                floats.extend(v[0] for v in struct.iter_unpack("<f", value))
        elif field_num == 8:
            ints.extend(_as_signed64(v) for v in _repeated_varints(wire, value))
        elif field_num == 9:
            strings.append(value.decode("utf-8"))
        # field 20 (declared type) is redundant with the populated slot
    if tensor is not None:
        return name, tensor
    if single_i is not None:
        return name, single_i
    if single_f is not None:
        return name, single_f
    if single_s is not None:
        return name, single_s
    if ints:
        return name, ints
    if floats:
        return name, floats
    if strings:
        return name, strings
    return name, None


def _parse_node(buf: bytes) -> OnnxNode:
    node = OnnxNode(op_type="", inputs=[], outputs=[])
    for field_num, _wire, value in _iter_fields(buf):
        if field_num == 1:
            node.inputs.append(value.decode("utf-8"))
        elif field_num == 2:
            node.outputs.append(value.decode("utf-8"))
        elif field_num == 3:
            node.name = value.decode("utf-8")
        elif field_num == 4:
            node.op_type = value.decode("utf-8")
        elif field_num == 5:
            key, attr_value = _parse_attr(value)
            node.attrs[key] = attr_value
    if not node.op_type:
        raise OnnxFormatError("node without op_type")
    return node


def _parse_value_info(buf: bytes) -> tuple[str, tuple]:
    name = ""
    dims: list = []
    for field_num, _wire, value in _iter_fields(buf):
        if field_num == 1:
            name = value.decode("utf-8")
        elif field_num == 2:
            for f2, _w2, v2 in _iter_fields(value):
                if f2 != 1:  # tensor_type
                    continue
                for f3, _w3, v3 in _iter_fields(v2):
                    if f3 != 2:  # shape
                        continue
                    for f4, _w4, v4 in _iter_fields(v3):
                        if f4 != 1:  # dim
                            continue
                        dim_val = None
                        for f5, w5, v5 in _iter_fields(v4):
                            if f5 == 1:
                                dim_val = _as_signed64(v5)
                            elif f5 == 2:
                                dim_val = v5.decode("utf-8")
                        dims.append(dim_val)
    return name, tuple(dims)


def _parse_graph(buf: bytes) -> OnnxGraph:
    graph = OnnxGraph()
    for field_num, _wire, value in _iter_fields(buf):
        if field_num == 1:
            graph.nodes.append(_parse_node(value))
        elif field_num == 2:
            graph.name = value.decode("utf-8")
        elif field_num == 5:
            name, arr = _parse_tensor(value)
            graph.initializers[name] = arr
        elif field_num == 11:
            graph.inputs.append(_parse_value_info(value))
        elif field_num == 12:
            graph.outputs.append(_parse_value_info(value))
    return graph


def load_model(path) -> OnnxGraph:
    with open(path, "rb") as fh:
        blob = fh.read()
    return model_from_bytes(blob)


def model_from_bytes(blob: bytes) -> OnnxGraph:
    graph = None
    try:
        for field_num, _wire, value in _iter_fields(blob):
            if field_num == 7:
                graph = _parse_graph(value)
    except OnnxFormatError:
        raise
    except Exception as exc:  # corrupt length prefixes land here
        raise OnnxFormatError(f"malformed graph file: {exc}") from None
    if graph is None:
        raise OnnxFormatError("file contains no graph")
    return graph
