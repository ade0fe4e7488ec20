import numpy as np
import pytest
from scipy import signal

from gestalt_probe.onnx_io import OnnxGraph
from gestalt_probe.runtime import InferenceError, evaluate


def _graph_one(op, n_in=1, attrs=None, extra_init=None, input_names=None):
    g = OnnxGraph()
    names = input_names or [f"x{i}" for i in range(n_in)]
    for n in names:
        if extra_init and n in extra_init:
            g.add_initializer(n, extra_init[n])
        else:
            g.inputs.append((n, ()))
    g.add_node(op, names, ["y"], **(attrs or {}))
    g.outputs.append(("y", ()))
    return g


def _run(op, feeds, attrs=None, inits=None):
    names = list(feeds) + list(inits or {})
    g = _graph_one(op, attrs=attrs, extra_init=inits, input_names=names)
    return evaluate(g, feeds)["y"]


def test_conv_hand_computed_2x2():
    # valid cross-correlation: [[1,2],[3,4]] * kernel [[1,0],[0,-1]] = 1 - 4 = -3
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
    w = np.array([[[[1.0, 0.0], [0.0, -1.0]]]], dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    y = _run("Conv", {"x": x}, inits={"w": w, "b": b})
    assert y.shape == (1, 1, 1, 1)
    assert y[0, 0, 0, 0] == pytest.approx(-3.0)


def test_conv_hand_computed_3x3_with_bias():
    x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    w = np.ones((1, 1, 2, 2), dtype=np.float32)
    b = np.array([10.0], dtype=np.float32)
    # windows: [0+1+3+4, 1+2+4+5; 3+4+6+7, 4+5+7+8] + 10
    y = _run("Conv", {"x": x}, inits={"w": w, "b": b})
    assert np.array_equal(y[0, 0], np.array([[18.0, 22.0], [30.0, 34.0]]))


def test_conv_matches_scipy_correlate(rng):
    x = rng.normal(size=(2, 3, 12, 12)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    y = _run("Conv", {"x": x}, inits={"w": w, "b": b})
    expect = np.zeros((2, 4, 10, 10))
    for n in range(2):
        for m in range(4):
            acc = sum(
                signal.correlate2d(x[n, c].astype(np.float64), w[m, c].astype(np.float64), mode="valid")
                for c in range(3)
            )
            expect[n, m] = acc + b[m]
    assert np.abs(y - expect).max() < 1e-4


def test_conv_stride_pad_matches_scipy(rng):
    x = rng.normal(size=(1, 2, 9, 9)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = np.zeros(3, dtype=np.float32)
    y = _run("Conv", {"x": x}, attrs={"strides": [2, 2], "pads": [1, 1, 1, 1]},
             inits={"w": w, "b": b})
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (1, 1), (1, 1)))
    full = np.zeros((1, 3, 9, 9))
    for m in range(3):
        full[0, m] = sum(
            signal.correlate2d(xp[0, c], w[m, c].astype(np.float64), mode="valid")
            for c in range(2)
        )
    assert np.abs(y - full[:, :, ::2, ::2]).max() < 1e-4


def test_grouped_conv_equals_blockwise(rng):
    x = rng.normal(size=(1, 4, 6, 6)).astype(np.float32)
    w = rng.normal(size=(4, 2, 3, 3)).astype(np.float32)
    b = np.zeros(4, dtype=np.float32)
    y = _run("Conv", {"x": x}, attrs={"group": 2}, inits={"w": w, "b": b})
    y0 = _run("Conv", {"x": x[:, :2]}, inits={"w": w[:2], "b": b[:2]})
    y1 = _run("Conv", {"x": x[:, 2:]}, inits={"w": w[2:], "b": b[2:]})
    assert np.allclose(y, np.concatenate([y0, y1], axis=1), atol=1e-6)


def test_maxpool_hand_case():
    x = np.array([[[[1, 2, 5, 3], [0, 4, 1, 1], [7, 0, 2, 2], [1, 1, 9, 0]]]],
                 dtype=np.float32)
    y = _run("MaxPool", {"x": x}, attrs={"kernel_shape": [2, 2], "strides": [2, 2]})
    assert np.array_equal(y[0, 0], np.array([[4.0, 5.0], [7.0, 9.0]]))


def test_maxpool_odd_dim_floor():
    x = np.arange(25, dtype=np.float32).reshape(1, 1, 5, 5)
    y = _run("MaxPool", {"x": x}, attrs={"kernel_shape": [2, 2], "strides": [2, 2]})
    assert y.shape == (1, 1, 2, 2)
    assert y[0, 0, 1, 1] == 18.0


def test_maxpool_ceil_mode():
    x = np.arange(25, dtype=np.float32).reshape(1, 1, 5, 5)
    y = _run("MaxPool", {"x": x},
             attrs={"kernel_shape": [2, 2], "strides": [2, 2], "ceil_mode": 1})
    assert y.shape == (1, 1, 3, 3)
    assert y[0, 0, 2, 2] == 24.0


def test_avgpool_include_vs_exclude_pad():
    x = np.ones((1, 1, 2, 2), dtype=np.float32)
    inc = _run("AveragePool", {"x": x},
               attrs={"kernel_shape": [3, 3], "pads": [1, 1, 1, 1],
                      "count_include_pad": 1})
    exc = _run("AveragePool", {"x": x},
               attrs={"kernel_shape": [3, 3], "pads": [1, 1, 1, 1],
                      "count_include_pad": 0})
    assert inc[0, 0, 0, 0] == pytest.approx(4.0 / 9.0)
    assert exc[0, 0, 0, 0] == pytest.approx(1.0)


def test_global_average_pool():
    x = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2)
    y = _run("GlobalAveragePool", {"x": x})
    assert y.shape == (1, 2, 1, 1)
    assert y[0, 0, 0, 0] == pytest.approx(1.5)
    assert y[0, 1, 0, 0] == pytest.approx(5.5)


def test_batchnorm_formula(rng):
    x = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
    scale = rng.normal(size=3).astype(np.float32)
    bias = rng.normal(size=3).astype(np.float32)
    mean = rng.normal(size=3).astype(np.float32)
    var = rng.uniform(0.5, 2.0, size=3).astype(np.float32)
    y = _run("BatchNormalization", {"x": x},
             inits={"scale": scale, "bias": bias, "mean": mean, "var": var},
             attrs={"epsilon": 1e-5})
    expect = scale.reshape(1, 3, 1, 1) * (x - mean.reshape(1, 3, 1, 1)) / np.sqrt(
        var.reshape(1, 3, 1, 1) + 1e-5
    ) + bias.reshape(1, 3, 1, 1)
    assert np.abs(y - expect).max() < 1e-5


def test_gemm_trans_and_coefficients(rng):
    a = rng.normal(size=(2, 3)).astype(np.float32)
    b = rng.normal(size=(4, 3)).astype(np.float32)
    c = rng.normal(size=(4,)).astype(np.float32)
    y = _run("Gemm", {"a": a}, inits={"b": b, "c": c},
             attrs={"transB": 1, "alpha": 2.0, "beta": 0.5})
    assert np.allclose(y, 2.0 * (a @ b.T) + 0.5 * c, atol=1e-5)


def test_softmax_rows_sum_to_one(rng):
    x = rng.normal(size=(5, 7)).astype(np.float32) * 10
    y = _run("Softmax", {"x": x}, attrs={"axis": 1})
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)


def test_flatten_and_reshape():
    x = np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2)
    y = _run("Flatten", {"x": x}, attrs={"axis": 1})
    assert y.shape == (2, 12)
    z = _run("Reshape", {"x": x}, inits={"s": np.array([0, -1], dtype=np.int64)})
    assert z.shape == (2, 12)
    assert np.array_equal(y, z)


def test_concat_and_elementwise(rng):
    a = rng.normal(size=(1, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=(1, 5, 3, 3)).astype(np.float32)
    y = _run("Concat", {"a": a, "b": b}, attrs={"axis": 1})
    assert y.shape == (1, 7, 3, 3)
    s = _run("Add", {"a": a, "b": a.copy()})
    assert np.allclose(s, 2 * a)


def test_pad_constant():
    x = np.ones((1, 1, 2, 2), dtype=np.float32)
    pads = np.array([0, 0, 1, 1, 0, 0, 1, 1], dtype=np.int64)
    y = _run("Pad", {"x": x}, inits={"p": pads})
    assert y.shape == (1, 1, 4, 4)
    assert y[0, 0, 0, 0] == 0.0 and y[0, 0, 1, 1] == 1.0


def test_clip_with_inputs():
    x = np.array([-2.0, 0.5, 9.0], dtype=np.float32)
    y = _run("Clip", {"x": x}, inits={"lo": np.asarray(0.0, dtype=np.float32),
                                      "hi": np.asarray(6.0, dtype=np.float32)})
    assert y.tolist() == [0.0, 0.5, 6.0]


def test_transpose_and_identity(rng):
    x = rng.normal(size=(2, 3, 4)).astype(np.float32)
    y = _run("Transpose", {"x": x}, attrs={"perm": [0, 2, 1]})
    assert y.shape == (2, 4, 3)
    z = _run("Identity", {"x": x})
    assert np.array_equal(z, x)


def test_reduce_mean_axes():
    x = np.arange(12, dtype=np.float32).reshape(1, 3, 2, 2)
    y = _run("ReduceMean", {"x": x}, attrs={"axes": [2, 3], "keepdims": 1})
    assert y.shape == (1, 3, 1, 1)
    assert np.allclose(y.reshape(-1), [1.5, 5.5, 9.5])


def test_unsupported_op_reported():
    with pytest.raises(InferenceError, match="unsupported op type 'LSTM'"):
        _run("LSTM", {"x": np.zeros((1, 2), dtype=np.float32)})


def test_missing_feed_reported(smallnet_handle):
    with pytest.raises(InferenceError, match="missing input feed"):
        evaluate(smallnet_handle.graph, {})


def test_unknown_requested_tensor():
    g = _graph_one("Relu", input_names=["x"])
    with pytest.raises(InferenceError, match="not produced"):
        evaluate(g, {"x": np.zeros(3, dtype=np.float32)}, wanted=["zz"])


def test_determinism_bitwise(rng, smallnet_handle):
    x = rng.normal(size=(1, 3, 64, 64)).astype(np.float32)
    feed = smallnet_handle.graph.feed_names()[0]
    out1 = evaluate(smallnet_handle.graph, {feed: x})
    out2 = evaluate(smallnet_handle.graph, {feed: x})
    for k in out1:
        assert np.array_equal(out1[k], out2[k])
