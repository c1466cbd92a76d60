"""Slow, obviously-correct reference computations used only by tests."""

import math
from collections import deque

import numpy as np


def bfs_component(corpus, start, year):
    """Component of ``start`` among papers published up to ``year`` (plain BFS)."""
    alive = {p.id for p in corpus if p.year <= year}
    if start not in alive:
        return frozenset()
    nbrs = {pid: set() for pid in alive}
    for p in corpus:
        if p.id in alive:
            for c in p.cited_ids:
                if c in alive:
                    nbrs[p.id].add(c)
                    nbrs[c].add(p.id)
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return frozenset(seen)


def brute_force_dynamic_graph(corpus):
    """Probe every earliest-year paper by recomputing components from scratch each year."""
    years = sorted({p.year for p in corpus})
    candidates = sorted(p.id for p in corpus if p.year == years[0])
    scores = {}
    for cand in candidates:
        scores[cand] = sum(len(bfs_component(corpus, cand, y)) for y in years)
    best_score = max(scores.values())
    best = sorted(c for c, s in scores.items() if s == best_score)[0]
    snaps = []
    for y in years:
        nodes = bfs_component(corpus, best, y)
        cites = frozenset((p, c) for p in nodes for c in corpus.papers[p].cited_ids if c in nodes)
        snaps.append((y, nodes, cites))
    return best, snaps


def dense_normalized_adjacency(pairs, m):
    """Literal D^-1/2 (A + I) D^-1/2 with explicit loops."""
    a = [[0.0] * m for _ in range(m)]
    for i, j in pairs:
        if i != j:
            a[i][j] = 1.0
            a[j][i] = 1.0
    for i in range(m):
        a[i][i] += 1.0
    d = [sum(row) for row in a]
    return np.array([[a[i][j] / math.sqrt(d[i] * d[j]) for j in range(m)] for i in range(m)])


def central_differences(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy()
        dn = x.copy()
        up.flat[i] += h
        dn.flat[i] -= h
        g.flat[i] = (f(up) - f(dn)) / (2 * h)
    return g
