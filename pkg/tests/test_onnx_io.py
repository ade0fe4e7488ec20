import numpy as np
import pytest

from gestalt_probe.onnx_io import (
    OnnxFormatError,
    OnnxGraph,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
)


def _demo_graph():
    g = OnnxGraph(name="demo")
    g.inputs.append(("x", (1, 3, 8, 8)))
    g.add_initializer("w", np.arange(12, dtype=np.float32).reshape(4, 3, 1, 1))
    g.add_initializer("b", np.zeros(4, dtype=np.float32))
    g.add_initializer("shape", np.array([1, -1], dtype=np.int64))
    g.add_node("Conv", ["x", "w", "b"], ["conv"], name="conv0",
               strides=[1, 1], pads=[0, 0, 0, 0], group=1)
    g.add_node("Relu", ["conv"], ["act"], name="relu0")
    g.add_node("Reshape", ["act", "shape"], ["flat"], name="reshape0")
    g.add_node("Gemm", ["flat", "w2t", "b2"], ["y"], name="gemm0",
               transB=1, alpha=1.0, beta=1.0)
    g.add_initializer("w2t", np.ones((2, 256), dtype=np.float32))
    g.add_initializer("b2", np.zeros(2, dtype=np.float32))
    g.outputs.append(("y", (1, 2)))
    g.outputs.append(("act", (1, 4, 8, 8)))
    return g


def test_roundtrip_preserves_structure(tmp_path):
    g = _demo_graph()
    path = tmp_path / "demo.onnx"
    save_model(g, path)
    g2 = load_model(path)
    assert g2.name == "demo"
    assert [n.op_type for n in g2.nodes] == ["Conv", "Relu", "Reshape", "Gemm"]
    assert [n.name for n in g2.nodes] == ["conv0", "relu0", "reshape0", "gemm0"]
    assert g2.nodes[0].inputs == ["x", "w", "b"]
    assert g2.nodes[0].attrs["strides"] == [1, 1]
    assert g2.nodes[0].attrs["group"] == 1
    assert g2.nodes[3].attrs["transB"] == 1
    assert g2.nodes[3].attrs["alpha"] == pytest.approx(1.0)
    assert [name for name, _ in g2.inputs] == ["x"]
    assert [name for name, _ in g2.outputs] == ["y", "act"]
    assert g2.inputs[0][1] == (1, 3, 8, 8)


def test_roundtrip_preserves_tensors(tmp_path):
    g = _demo_graph()
    path = tmp_path / "demo.onnx"
    save_model(g, path)
    g2 = load_model(path)
    for name, arr in g.initializers.items():
        back = g2.initializers[name]
        assert back.dtype == arr.dtype
        assert np.array_equal(back, arr)


def test_roundtrip_negative_int64_initializer(tmp_path):
    g = OnnxGraph()
    g.inputs.append(("x", (1, 4)))
    g.add_initializer("shape", np.array([1, -1], dtype=np.int64))
    g.add_node("Reshape", ["x", "shape"], ["y"])
    g.outputs.append(("y", (1, 4)))
    blob = model_to_bytes(g)
    g2 = model_from_bytes(blob)
    assert g2.initializers["shape"].tolist() == [1, -1]


def test_string_and_float_list_attrs_roundtrip():
    g = OnnxGraph()
    g.inputs.append(("x", (1,)))
    g.add_node("Pad", ["x"], ["y"], mode="constant", scales=[0.5, 2.0])
    g.outputs.append(("y", (1,)))
    g2 = model_from_bytes(model_to_bytes(g))
    assert g2.nodes[0].attrs["mode"] == "constant"
    assert g2.nodes[0].attrs["scales"] == pytest.approx([0.5, 2.0])


def test_dynamic_batch_dim_roundtrip():
    g = OnnxGraph()
    g.inputs.append(("x", ("N", 3, 4, 4)))
    g.add_node("Relu", ["x"], ["y"])
    g.outputs.append(("y", ("N", 3, 4, 4)))
    g2 = model_from_bytes(model_to_bytes(g))
    assert g2.inputs[0][1] == ("N", 3, 4, 4)


def test_malformed_file_raises(tmp_path):
    path = tmp_path / "junk.onnx"
    path.write_bytes(b"\xff\xfe\x00garbage that is not a model")
    with pytest.raises(OnnxFormatError):
        load_model(path)


def test_graphless_file_raises():
    with pytest.raises(OnnxFormatError, match="no graph"):
        model_from_bytes(b"")


def test_unsupported_initializer_dtype():
    g = OnnxGraph()
    with pytest.raises(OnnxFormatError, match="dtype"):
        g.add_initializer("bad", np.zeros(3, dtype=np.int16))
