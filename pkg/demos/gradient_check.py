"""
Checking the tape against finite differences
============================================

Every model is differentiated by a small reverse-mode tape. Here its
gradients are compared with central differences on a four-node graph.
"""

import numpy as np

from citeflow import tensor as T
from citeflow.dyngraph import normalize_adjacency
from citeflow.models import TrainingData, forward, init_params
from citeflow.tensor import Tape, grad_check, parameter

# one primitive by hand: d/dW sum(W) is all ones
w = parameter(np.arange(6.0).reshape(2, 3))
with Tape() as tape:
    loss = T.total(w)
print(tape.backward(loss, {"w": w})["w"])

# a four-node graph over three years
edges = [[], [(1, 0)], [(1, 0), (2, 0), (3, 1)]]
adjs = [normalize_adjacency(e, 4) for e in edges]
rng = np.random.default_rng(0)
feats = [rng.uniform(0.1, 1, size=(4, 3)) for _ in range(3)]
mask = np.array([[1, 1, 1], [0, 1, 1], [0, 0, 1], [0, 0, 1]], dtype=bool)
labels = rng.uniform(0, 2, size=(4, 3)) * mask
data = TrainingData(adjs, feats, labels, mask, np.arange(4), np.arange(4), np.arange(4))

for kind in ("gcn-lstm", "lstm", "gcn"):
    params = init_params(kind, 3, seed=1, gcn_hidden=8, lstm_hidden=6)
    err = grad_check(lambda p: T.reduce_mean_abs(forward(kind, data, p) - labels, mask), params)
    n = sum(v.size for v in params.values())
    print(f"{kind:9s} {n:4d} parameters, max relative error {err:.2e}")
