"""GCN encoder, LSTM decoder, their ablations, the mean baseline and training."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .tensor import (
    AdamState,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    as_tensor,
    concat,
    matmul,
    mul,
    parameter,
    reduce_mean_abs,
    relu,
    sigmoid,
    spmm,
    tanh,
)

MODEL_KINDS = ("gcn-lstm", "lstm", "gcn", "mean")
ACTIVATIONS = {"relu": relu, "tanh": tanh}
GATES = ("i", "f", "g", "o")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingData:
    adjacencies: Sequence[sp.csr_matrix]  # T normalized adjacencies, m x m
    features: Sequence[np.ndarray]  # T feature matrices, m x n
    labels: np.ndarray  # m x T
    mask: np.ndarray  # m x T
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def m(self) -> int:
        return self.labels.shape[0]

    @property
    def T(self) -> int:
        return self.labels.shape[1]

    @property
    def n_features(self) -> int:
        return self.features[0].shape[1]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 1000
    patience: int = 10
    seed: int = 0
    activation: str = "relu"
    gcn_hidden: int = 256
    lstm_hidden: int = 128

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("training settings must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float


@dataclass
class TrainResult:
    kind: str
    params: dict[str, np.ndarray]
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = float("nan")


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _lstm_init(rng, n_in, hidden, params):
    k = 1.0 / np.sqrt(hidden)
    for gate in GATES:
        params[f"lstm.{gate}.w"] = rng.uniform(-k, k, size=(n_in + hidden, hidden))
        params[f"lstm.{gate}.b"] = rng.uniform(-k, k, size=(hidden,))


def init_params(kind: str, n_features: int, seed: int = 0, gcn_hidden: int = 256, lstm_hidden: int = 128) -> dict[str, np.ndarray]:
    """Fresh weights: Glorot-uniform GCN layers, PyTorch-style uniform LSTM and head."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    if kind in ("gcn-lstm", "gcn"):
        params["gcn.w0"] = _glorot(rng, n_features, gcn_hidden)
        params["gcn.w1"] = _glorot(rng, gcn_hidden, gcn_hidden)
    if kind == "gcn-lstm":
        _lstm_init(rng, gcn_hidden, lstm_hidden, params)
    elif kind == "lstm":
        _lstm_init(rng, n_features, lstm_hidden, params)
    elif kind not in ("gcn", "mean"):
        raise ValueError(f"unknown model kind {kind!r}")
    if kind != "mean":
        fan_in = gcn_hidden if kind == "gcn" else lstm_hidden
        k = 1.0 / np.sqrt(fan_in)
        params["head.w"] = rng.uniform(-k, k, size=(fan_in, 1))
        params["head.b"] = np.zeros(1)
    return params


def _rows(adj, rows):
    return adj if rows is None else adj[rows]


def gcn_embed(adjacencies, features, params, activation: str = "relu", rows=None) -> list[Tensor]:
    """Two shared GCN layers applied to every snapshot.

    ``Z_t = act(A_t . act(A_t X_t W0) . W1)``. With ``rows`` only those rows of
    each ``Z_t`` are produced (the first layer still covers every node).
    """
    act = ACTIVATIONS[activation]
    w0, w1 = as_tensor(params["gcn.w0"]), as_tensor(params["gcn.w1"])
    if len(adjacencies) != len(features):
        raise ShapeError(f"{len(adjacencies)} adjacencies but {len(features)} feature matrices")
    out = []
    for adj, x in zip(adjacencies, features):
        x = as_tensor(x)
        if adj.shape[0] != x.shape[0]:
            raise ShapeError(f"adjacency over {adj.shape[0]} nodes, features over {x.shape[0]}")
        h1 = act(matmul(spmm(adj, x), w0))
        out.append(act(matmul(spmm(_rows(adj, rows), h1), w1)))
    return out


def _head(h, params) -> Tensor:
    return matmul(h, params["head.w"]) + params["head.b"]


def lstm_decode(sequence, params) -> Tensor:
    """Run one LSTM layer over a per-node sequence; returns ``b x T`` head outputs.

    ``sequence`` is a list of ``b x w`` inputs, one per timestep. Initial
    hidden and cell states are zero.
    """
    p = {k: as_tensor(v) for k, v in params.items() if k.startswith(("lstm.", "head."))}
    hidden = p["lstm.i.w"].shape[1]
    n_in = p["lstm.i.w"].shape[0] - hidden
    b = as_tensor(sequence[0]).shape[0]
    h = Tensor(np.zeros((b, hidden)))
    c = Tensor(np.zeros((b, hidden)))
    preds = []
    for x in sequence:
        x = as_tensor(x)
        if x.shape[1] != n_in:
            raise ShapeError(f"lstm input width {x.shape[1]}, gates expect {n_in}")
        xh = concat([x, h])
        i = sigmoid(matmul(xh, p["lstm.i.w"]) + p["lstm.i.b"])
        f = sigmoid(matmul(xh, p["lstm.f.w"]) + p["lstm.f.b"])
        g = tanh(matmul(xh, p["lstm.g.w"]) + p["lstm.g.b"])
        o = sigmoid(matmul(xh, p["lstm.o.w"]) + p["lstm.o.b"])
        c = mul(f, c) + mul(i, g)
        h = mul(o, tanh(c))
        preds.append(_head(h, p))
    return concat(preds)


def forward_gcn_lstm(adjacencies, features, params, activation: str = "relu", rows=None) -> Tensor:
    """Embed every snapshot first, then decode the per-node embedding sequences."""
    return lstm_decode(gcn_embed(adjacencies, features, params, activation, rows), params)


def forward_lstm_only(features, params, rows=None) -> Tensor:
    seq = [np.asarray(x if rows is None else x[rows], dtype=np.float64) for x in features]
    return lstm_decode(seq, params)


def forward_gcn_only(adjacencies, features, params, activation: str = "relu", rows=None) -> Tensor:
    """A shared linear head on each ``Z_t``; no recurrence."""
    p = {k: as_tensor(v) for k, v in params.items()}
    return concat([_head(z, p) for z in gcn_embed(adjacencies, features, p, activation, rows)])


def forward(kind: str, data: TrainingData, params, activation: str = "relu", rows=None) -> Tensor:
    if kind == "gcn-lstm":
        return forward_gcn_lstm(data.adjacencies, data.features, params, activation, rows)
    if kind == "lstm":
        return forward_lstm_only(data.features, params, rows)
    if kind == "gcn":
        return forward_gcn_only(data.adjacencies, data.features, params, activation, rows)
    if kind == "mean":
        const = as_tensor(params["mean.constants"]).value
        n = data.m if rows is None else len(rows)
        return Tensor(np.tile(const, (n, 1)))
    raise ValueError(f"unknown model kind {kind!r}")


def predict(kind: str, data: TrainingData, params: Mapping[str, np.ndarray], batch_size: int = 256, activation: str = "relu") -> np.ndarray:
    """``m x T`` predictions. Recurrent models decode node batches of ``batch_size``."""
    if kind == "gcn-lstm":
        z = [t.value for t in gcn_embed(data.adjacencies, data.features, params, activation)]
        chunks = [lstm_decode([zt[lo : lo + batch_size] for zt in z], params).value for lo in range(0, data.m, batch_size)]
        return np.concatenate(chunks, axis=0)
    if kind == "lstm":
        return np.concatenate(
            [forward_lstm_only(data.features, params, np.arange(lo, min(lo + batch_size, data.m))).value for lo in range(0, data.m, batch_size)],
            axis=0,
        )
    return forward(kind, data, params, activation).value


def mae(predictions, labels, mask, node_subset=None) -> float:
    """Mean ``|prediction - label|`` over masked-in cells of the selected nodes."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if predictions.shape != labels.shape or mask.shape != labels.shape:
        raise ShapeError(f"mae: shapes {predictions.shape}, {labels.shape}, {mask.shape}")
    if node_subset is not None:
        idx = np.asarray(node_subset, dtype=np.int64)
        predictions, labels, mask = predictions[idx], labels[idx], mask[idx]
    if not mask.any():
        raise ValueError("mae: no masked-in cells selected")
    return float(np.abs(predictions - labels)[mask].mean())


def mean_baseline(labels, mask, train_val_indices) -> np.ndarray:
    """Per-timestep mean of masked labels over the given nodes."""
    idx = np.asarray(train_val_indices, dtype=np.int64)
    lab, msk = np.asarray(labels)[idx], np.asarray(mask, dtype=bool)[idx]
    counts = msk.sum(axis=0)
    if np.any(counts == 0):
        bad = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"mean baseline: timesteps {bad} have no masked-in train/val nodes")
    return (lab * msk).sum(axis=0) / counts


class EarlyStopping:
    """Track the best score; signal a stop ``patience`` epochs after the last improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = -1

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


def train(kind: str, data: TrainingData, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Adam on masked MAE with early stopping on validation MAE.

    Recurrent models step once per shuffled node batch; the GCN-only model
    steps once per epoch on all training nodes. Returns the best-validation
    parameters.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    train_idx = np.asarray(data.train_idx, dtype=np.int64)
    val_idx = np.asarray(data.val_idx, dtype=np.int64)
    if np.intersect1d(train_idx, val_idx).size:
        raise ValueError("train and validation nodes overlap")

    if kind == "mean":
        const = mean_baseline(data.labels, data.mask, np.concatenate([train_idx, val_idx]))
        params = {"mean.constants": const}
        val = mae(predict(kind, data, params), data.labels, data.mask, val_idx)
        return TrainResult(kind, params, [], 0, val)

    rng = np.random.default_rng(config.seed)
    params = init_params(kind, data.n_features, config.seed, config.gcn_hidden, config.lstm_hidden)
    state = AdamState(lr=config.lr)
    stopper = EarlyStopping(config.patience)
    result = TrainResult(kind, copy.deepcopy(params))
    step_size = config.batch_size if kind in ("gcn-lstm", "lstm") else len(train_idx)

    for epoch in range(config.max_epochs):
        order = rng.permutation(train_idx)
        loss_sum, cells = 0.0, 0
        for lo in range(0, len(order), step_size):
            batch = np.sort(order[lo : lo + step_size])
            bmask = data.mask[batch]
            n_cells = int(bmask.sum())
            if n_cells == 0:
                continue
            tensors = {k: parameter(v, name=k) for k, v in params.items()}
            try:
                with Tape() as tape:
                    pred = forward(kind, data, tensors, config.activation, rows=batch)
                    loss = reduce_mean_abs(pred - data.labels[batch], bmask)
                grads = tape.backward(loss, tensors)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"{kind}: non-finite values at epoch {epoch}, batch starting {lo}: {exc}") from exc
            adam_step(params, grads, state)
            bad = [k for k, v in params.items() if not np.isfinite(v).all()]
            if bad:
                raise TrainingDiverged(f"{kind}: non-finite parameters {bad} after epoch {epoch}, batch starting {lo}")
            loss_sum += float(loss.value) * n_cells
            cells += n_cells
        try:
            val = mae(predict(kind, data, params, config.batch_size, config.activation), data.labels, data.mask, val_idx)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"{kind}: non-finite validation predictions at epoch {epoch}") from exc
        result.history.append(EpochRecord(epoch, loss_sum / max(cells, 1), val))
        if stopper.update(epoch, val):
            result.params = copy.deepcopy(params)
            result.best_epoch = epoch
            result.best_val_mae = val
        if stopper.should_stop(epoch):
            break
    return result
