import struct
import json

import numpy as np
import pytest
import scipy.sparse as sp

from citeflow import tensor as T
from citeflow.tensor import (
    AdamState,
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    adam_step,
    grad_check,
    load_checkpoint,
    parameter,
    save_checkpoint,
)

from oracles import central_differences


def test_matmul_identity():
    b = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert np.array_equal(T.matmul(np.eye(2), b).value, b)


def test_spmm_example():
    a = sp.csr_matrix([[0.5, 0.5], [0.5, 0.5]])
    assert np.array_equal(T.spmm(a, [[1.0], [3.0]]).value, [[2.0], [2.0]])


def test_mean_abs_example():
    assert float(T.reduce_mean_abs([[1.0, -2.0]], np.ones((1, 2), bool)).value) == 1.5


def test_spmm_matches_dense():
    rng = np.random.default_rng(0)
    dense = (rng.random((30, 30)) < 0.2) * rng.integers(1, 8, (30, 30)) / 4.0
    h = rng.integers(-8, 8, (30, 5)) / 8.0
    # dyadic values: every sum is exact, so both routes must agree bit for bit
    assert np.array_equal(T.spmm(sp.csr_matrix(dense), h).value, dense @ h)
    dense = (rng.random((30, 30)) < 0.2) * rng.random((30, 30))
    h = rng.normal(size=(30, 5))
    np.testing.assert_allclose(T.spmm(sp.csr_matrix(dense), h).value, dense @ h, rtol=1e-14, atol=1e-15)


def test_sum_gradient_is_ones():
    w = parameter(np.arange(4.0).reshape(2, 2))
    with Tape() as tape:
        loss = T.total(w)
    grads = tape.backward(loss, {"w": w})
    assert np.array_equal(grads["w"], np.ones((2, 2)))


def test_mean_abs_subgradient():
    w = parameter([[1.0, 2.0, 3.0, 4.0]])
    y = np.array([[0.0, 2.0, 5.0, 4.0]])
    with Tape() as tape:
        loss = T.reduce_mean_abs(w - y)
    g = tape.backward(loss, {"w": w})["w"]
    assert g.tolist() == [[0.25, 0.0, -0.25, 0.0]]


def test_mean_abs_respects_mask():
    w = parameter([[1.0, 100.0]])
    with Tape() as tape:
        loss = T.reduce_mean_abs(w, np.array([[True, False]]))
    assert float(loss.value) == 1.0
    assert tape.backward(loss, {"w": w})["w"].tolist() == [[1.0, 0.0]]


def test_unused_parameter_gets_zero_gradient():
    a, b = parameter([1.0, 2.0]), parameter([[3.0]])
    with Tape() as tape:
        loss = T.total(a * a)
    grads = tape.backward(loss, {"a": a, "b": b})
    assert grads["a"].tolist() == [2.0, 4.0]
    assert grads["b"].tolist() == [[0.0]]


def test_backward_errors():
    w = parameter([[1.0, 2.0]])
    with Tape() as tape:
        out = w * 2.0
    with pytest.raises(ShapeError):
        tape.backward(out, {"w": w})
    with Tape() as tape:
        loss = T.total(w)
    tape.backward(loss, {"w": w})
    with pytest.raises(TapeError):
        tape.backward(loss, {"w": w})
    tape.reset()
    with tape:
        loss = T.total(w)
    assert tape.backward(loss, {"w": w})["w"].tolist() == [[1.0, 1.0]]


@pytest.mark.parametrize(
    "op, args",
    [
        (T.matmul, (np.ones((2, 3)), np.ones((2, 3)))),
        (T.add, (np.ones((2, 3)), np.ones((3, 2)))),
        (T.concat, ([np.ones((2, 3)), np.ones((3, 3))],)),
        (T.reduce_mean_abs, (np.ones((2, 2)), np.ones((2, 3), bool))),
    ],
)
def test_shape_errors(op, args):
    with pytest.raises(ShapeError):
        op(*args)


def test_spmm_shape_error():
    with pytest.raises(ShapeError):
        T.spmm(sp.eye(3, format="csr"), np.ones((2, 2)))


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_trips():
    with pytest.raises(NonFiniteError):
        T.mul([1e300], [1e300])


def test_no_recording_outside_tape():
    w = parameter([1.0])
    out = w * 3.0
    assert out.backward_fn is None and not out.requires_grad


def _unary_cases(rng):
    return {
        "relu": (lambda p: T.total(T.relu(p["x"])), {"x": rng.normal(size=(3, 4))}),
        "sigmoid": (lambda p: T.total(T.sigmoid(p["x"])), {"x": rng.normal(size=(3, 4)) * 3}),
        "tanh": (lambda p: T.total(T.tanh(p["x"])), {"x": rng.normal(size=(3, 4))}),
    }


def _binary_cases(rng):
    a = sp.random(5, 5, density=0.4, random_state=1, format="csr")
    w = rng.normal(size=(3, 4))
    return {
        "matmul": (lambda p: T.total(T.matmul(p["a"], p["b"]) * w), {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(2, 4))}),
        "spmm": (lambda p: T.total(T.spmm(a, p["h"]) * rng_fixed(5, 2)), {"h": rng.normal(size=(5, 2))}),
        "add_bias": (lambda p: T.total((p["x"] + p["b"]) * w), {"x": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,))}),
        "sub": (lambda p: T.total((p["x"] - p["y"]) * w), {"x": rng.normal(size=(3, 4)), "y": rng.normal(size=(3, 4))}),
        "mul": (lambda p: T.total(p["x"] * p["y"]), {"x": rng.normal(size=(3, 4)), "y": rng.normal(size=(3, 4))}),
        "concat": (
            lambda p: T.total(T.concat([p["x"], p["y"]]) * rng_fixed(3, 6)),
            {"x": rng.normal(size=(3, 2)), "y": rng.normal(size=(3, 4))},
        ),
        "mean_abs": (lambda p: T.reduce_mean_abs(p["x"], MASK), {"x": rng.normal(size=(3, 4)) + 0.5}),
    }


MASK = np.array([[1, 0, 1, 1], [1, 1, 1, 0], [0, 1, 1, 1]], dtype=bool)


def rng_fixed(*shape):
    return np.random.default_rng(99).normal(size=shape)


@pytest.mark.parametrize("name", ["relu", "sigmoid", "tanh", "matmul", "spmm", "add_bias", "sub", "mul", "concat", "mean_abs"])
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(7)
    for _ in range(20):
        cases = {**_unary_cases(rng), **_binary_cases(rng)}
        fn, point = cases[name]
        if name in ("relu", "mean_abs") and min(np.abs(v).min() for v in point.values()) < 1e-3:
            continue  # skip points on the kink
        assert grad_check(fn, point, h=1e-5) < 1e-4


def test_grad_check_independent_oracle():
    """The tape gradient also agrees with a separately written difference quotient."""
    a = sp.random(6, 6, density=0.5, random_state=3, format="csr")
    w = np.random.default_rng(3).normal(size=(3, 2))

    def f(x):
        return float(T.total(T.tanh(T.matmul(T.spmm(a, x), w))).value)

    x0 = np.random.default_rng(4).normal(size=(6, 3))
    p = parameter(x0)
    with Tape() as tape:
        loss = T.total(T.tanh(T.matmul(T.spmm(a, p), w)))
    g = tape.backward(loss, {"x": p})["x"]
    np.testing.assert_allclose(g, central_differences(f, x0), rtol=1e-6, atol=1e-9)


def test_grad_check_examples():
    assert grad_check(lambda p: T.total(p["x"] * p["x"]), {"x": np.array([3.0])}) < 1e-9
    point = {"x": np.array([[0.7, -1.2, 2.5]])}
    assert grad_check(lambda p: T.reduce_mean_abs(p["x"]), point) < 1e-6


def test_determinism():
    rng = np.random.default_rng(11)
    a, b = rng.normal(size=(20, 30)), rng.normal(size=(30, 10))

    def run():
        pa, pb = parameter(a), parameter(b)
        with Tape() as tape:
            loss = T.reduce_mean_abs(T.tanh(T.matmul(pa, pb)))
        g = tape.backward(loss, {"a": pa, "b": pb})
        return float(loss.value), g["a"].tobytes(), g["b"].tobytes()

    assert run() == run()


def test_adam_zero_gradient():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState(m={"w": np.array([0.5, 0.5])}, v={"w": np.array([0.25, 0.25])})
    adam_step(params, {"w": np.zeros(2)}, state)
    # parameters move only through the decayed first moment; with m = 0 they would not move at all
    assert state.m["w"].tolist() == [0.45, 0.45]
    assert state.v["w"] == pytest.approx([0.24975, 0.24975])
    fresh = {"w": np.array([1.0, -2.0])}
    s2 = AdamState()
    adam_step(fresh, {"w": np.zeros(2)}, s2)
    assert fresh["w"].tolist() == [1.0, -2.0] and s2.step == 1


def test_adam_first_step():
    params = {"w": np.array([0.0])}
    adam_step(params, {"w": np.array([1.0])}, AdamState(lr=0.001))
    assert params["w"][0] == pytest.approx(-0.001, abs=1e-10)


def test_adam_two_steps_decrease():
    params = {"w": np.array([5.0])}
    state = AdamState()
    seen = [5.0]
    for _ in range(2):
        adam_step(params, {"w": np.array([2.0])}, state)
        seen.append(params["w"][0])
    assert seen[0] > seen[1] > seen[2]
    assert state.step == 2


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


def test_checkpoint_roundtrip_and_layout(tmp_path):
    tensors = {"b": np.array([1.5, -2.0]), "a.w": np.arange(6.0).reshape(2, 3)}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors, {"kind": "gcn"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"kind": "gcn"}
    assert all(np.array_equal(loaded[k], tensors[k]) for k in tensors)

    raw = path.read_bytes()
    assert raw[:8] == b"CFCKPT01"
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + n])
    entry = {e["name"]: e for e in header["tensors"]}
    assert entry["a.w"] == {"name": "a.w", "shape": [2, 3], "offset": 0}
    assert entry["b"]["offset"] == 48
    data = raw[16 + n :]
    assert struct.unpack("<2d", data[48:64]) == (1.5, -2.0)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(p)
