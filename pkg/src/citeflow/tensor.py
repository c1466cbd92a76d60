"""A small reverse-mode autodiff engine on numpy arrays.

Operations executed inside ``with Tape() as tape:`` are recorded when any
input requires a gradient; ``tape.backward(loss, params)`` sweeps the record
once in reverse. Outside a tape the same functions just compute values.

Everything is float64. Any op producing NaN/Inf raises :class:`NonFiniteError`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class TapeError(RuntimeError):
    pass


_active: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "name", "grad")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed ops; supports exactly one backward sweep."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def backward(self, loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray] | None:
        """Accumulate d(loss)/d(leaf) for every leaf that requires grad.

        Leaves get their ``.grad`` set (zeros if off the loss path). If ``params``
        is given, returns ``{name: grad}`` for it.
        """
        if self.consumed:
            raise TapeError("backward already run on this tape; reset it first")
        if loss.value.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        leaves: dict[int, Tensor] = {}
        if loss.backward_fn is None and loss.requires_grad:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if parent.backward_fn is None:
                    leaves[key] = parent

        for key, leaf in leaves.items():
            leaf.grad = grads.get(key, np.zeros_like(leaf.value))
        if params is None:
            return None
        out = {}
        for name, p in params.items():
            g = grads.get(id(p)) if id(p) in leaves else None
            out[name] = np.zeros_like(p.value) if g is None else g
            p.grad = out[name]
        return out


def backward(loss: Tensor, params: Mapping[str, Tensor], tape: Tape) -> dict[str, np.ndarray]:
    return tape.backward(loss, params)


def _finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite output from {op}")
    return value


def _record(value: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor(_finite(value, op))
    if _active and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
        _active[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    """Equal shapes, or ``b`` a row vector / scalar broadcast over ``a`` (and vice versa)."""
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _record(av @ bv, (a, b), bw, "matmul")


def spmm(adj: sp.spmatrix, h) -> Tensor:
    """Sparse constant ``adj`` (p x q) times tensor ``h`` (q x r)."""
    h = as_tensor(h)
    if h.value.ndim != 2 or adj.shape[1] != h.shape[0]:
        raise ShapeError(f"spmm: {adj.shape} @ {h.shape}")
    adj = sp.csr_matrix(adj)

    def bw(g):
        return (adj.T @ g,)

    return _record(np.asarray(adj @ h.value), (h,), bw, "spmm")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _record(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _record(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value

    def bw(g):
        return (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape))

    return _record(av * bv, (a, b), bw, "mul")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.value > 0

    def bw(g):
        return (g * on,)

    return _record(np.where(on, a.value, 0.0), (a,), bw, "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        return (g * s * (1.0 - s),)

    return _record(s, (a,), bw, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)

    def bw(g):
        return (g * (1.0 - t * t),)

    return _record(t, (a,), bw, "tanh")


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along the last axis."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: nothing to concatenate")
    lead = ts[0].shape[:-1]
    if any(t.shape[:-1] != lead for t in ts):
        raise ShapeError(f"concat: mismatched leading shapes {[t.shape for t in ts]}")
    if axis not in (-1, ts[0].value.ndim - 1):
        raise ShapeError("concat only supports the last axis")
    bounds = np.cumsum([0] + [t.shape[-1] for t in ts])

    def bw(g):
        return tuple(g[..., lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _record(np.concatenate([t.value for t in ts], axis=-1), tuple(ts), bw, "concat")


def total(a) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    a = as_tensor(a)

    def bw(g):
        return (np.full(a.shape, float(g)),)

    return _record(np.array(a.value.sum()), (a,), bw, "sum")


def reduce_mean_abs(a, mask=None) -> Tensor:
    """Mean of ``|a|`` over the cells where ``mask`` is true.

    The subgradient of ``|x|`` at 0 is taken as 0.
    """
    a = as_tensor(a)
    m = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise ShapeError(f"reduce_mean_abs: mask {m.shape} vs values {a.shape}")
    n = int(m.sum())
    if n == 0:
        raise ShapeError("reduce_mean_abs: empty mask")
    sign = np.sign(a.value) * m

    def bw(g):
        return (float(g) * sign / n,)

    return _record(np.array(np.abs(a.value)[m].sum() / n), (a,), bw, "reduce_mean_abs")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update, in place. Returns ``(params, state)``."""
    for k, g in grads.items():
        if params[k].shape != g.shape:
            raise ShapeError(f"adam: grad {k} has shape {g.shape}, param {params[k].shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def grad_check(
    function: Callable[[dict[str, Tensor]], Tensor],
    point: Mapping[str, np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    ``max_coords`` samples that many coordinates per parameter instead of all.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    params = {k: parameter(v, name=k) for k, v in base.items()}
    with Tape() as tape:
        loss = function(params)
    analytic = tape.backward(loss, params)

    rng = np.random.default_rng(seed)

    def value_at(name, flat_i, delta):
        shifted = {k: Tensor(v) for k, v in base.items()}
        arr = base[name].copy()
        arr.flat[flat_i] += delta
        shifted[name] = Tensor(arr)
        return float(function(shifted).value)

    worst = 0.0
    for name, arr in base.items():
        coords = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            coords = rng.choice(arr.size, size=max_coords, replace=False)
        for i in coords:
            numeric = (value_at(name, i, h) - value_at(name, i, -h)) / (2 * h)
            a = float(analytic[name].flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# Checkpoint container:
#   8 bytes  magic b"CFCKPT01"
#   8 bytes  header length N, uint64 little-endian
#   N bytes  UTF-8 JSON {"tensors": [{"name", "shape", "offset"}], "meta": {...}}
#   data     float64 little-endian, C order; offsets are bytes from the start of data
CHECKPOINT_MAGIC = b"CFCKPT01"


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    table = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": table, "meta": dict(meta or {})}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + n].decode("utf-8"))
    data = raw[16 + n :]
    out = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start)
        out[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return out, header["meta"]
