"""Dynamic citation graph construction.

The graph at year ``t`` holds every paper published up to ``t`` with its
(symmetrized) citations. Connected components only ever merge as years pass,
so a single union-find sweep over the years serves every query here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import scipy.sparse as sp

from .corpus import CitationTimeline, Corpus, cumulative_citation_counts

PROBE_MODES = ("alg1", "final-component")


class GraphError(ValueError):
    pass


class UnionFind:
    """Disjoint sets over ``0..n-1`` with union by size and path halving."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


@dataclass(frozen=True)
class Snapshot:
    year: int
    node_ids: frozenset[str]
    citations: frozenset[tuple[str, str]]  # directed (citing, cited), both endpoints in node_ids

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        """Unordered pairs (smaller id first)."""
        return frozenset((a, b) if a < b else (b, a) for a, b in self.citations)


@dataclass(frozen=True)
class DynamicGraph:
    snapshots: tuple[Snapshot, ...]
    index: Mapping[str, int]
    best_paper: str
    probe_mode: str = "alg1"

    @property
    def years(self) -> list[int]:
        return [s.year for s in self.snapshots]

    @property
    def m(self) -> int:
        return len(self.index)

    @property
    def node_ids(self) -> list[str]:
        """Paper ids ordered by dense index."""
        ids = [""] * len(self.index)
        for pid, i in self.index.items():
            ids[i] = pid
        return ids

    def snapshot(self, year: int) -> Snapshot:
        for s in self.snapshots:
            if s.year == year:
                return s
        raise GraphError(f"no snapshot for year {year}")

    def last(self, years_back: int | None) -> "DynamicGraph":
        """The final ``years_back`` snapshots; the node index is unchanged."""
        if years_back is None or years_back >= len(self.snapshots):
            return self
        if years_back < 1:
            raise GraphError("years_back must be positive")
        return DynamicGraph(self.snapshots[-years_back:], self.index, self.best_paper, self.probe_mode)


@dataclass(frozen=True)
class NormalizedAdjacency:
    year: int
    matrix: sp.csr_matrix

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class YearStats:
    year: int
    n_nodes: int
    n_edges: int
    mean_degree: float
    max_degree: int
    max_citations: int
    avg_citations: float


def _sweep(corpus: Corpus) -> Iterator[tuple[int, UnionFind, list[str], dict[str, int], int]]:
    """Yield ``(year, uf, ids, pos, n_published)`` after adding each year's papers and citations.

    Papers are numbered in (year, id) order, so the published set at any year
    is the prefix ``ids[:n_published]``.
    """
    ids = sorted(corpus.papers, key=lambda p: (corpus.papers[p].year, p))
    pos = {pid: i for i, pid in enumerate(ids)}
    uf = UnionFind(len(ids))
    i = 0
    for year in corpus.years:
        while i < len(ids) and corpus.papers[ids[i]].year <= year:
            p = corpus.papers[ids[i]]
            for c in p.cited_ids:
                uf.union(i, pos[c])
            i += 1
        yield year, uf, ids, pos, i


def _groups(uf: UnionFind, ids: list[str], n: int) -> list[frozenset[str]]:
    members: dict[int, list[str]] = {}
    for i in range(n):
        members.setdefault(uf.find(i), []).append(ids[i])
    comps = [frozenset(v) for v in members.values()]
    comps.sort(key=lambda g: (-len(g), min(g)))
    return comps


def components_at(corpus: Corpus, year: int) -> list[frozenset[str]]:
    """Connected components of the graph of papers published up to ``year``.

    Sorted by size descending, ties broken by the smallest member id.
    """
    if year not in corpus.years:
        raise GraphError(f"year {year} not in corpus years")
    for y, uf, ids, _, n in _sweep(corpus):
        if y == year:
            return _groups(uf, ids, n)
    raise AssertionError("unreachable")


def probe_set(corpus: Corpus, probe_mode: str = "alg1") -> list[str]:
    if probe_mode not in PROBE_MODES:
        raise GraphError(f"unknown probe mode {probe_mode!r}")
    if not corpus.papers:
        return []
    if probe_mode == "alg1":
        first = corpus.years[0]
        return sorted(p.id for p in corpus if p.year == first)
    return sorted(components_at(corpus, corpus.years[-1])[0])


def probe_scores(corpus: Corpus, probe_mode: str = "alg1") -> dict[str, int]:
    """Sum over years of the size of the component holding each probed paper.

    A paper contributes nothing in years before its publication.
    """
    if not corpus.papers:
        raise GraphError("cannot probe an empty corpus")
    probed = probe_set(corpus, probe_mode)
    scores = dict.fromkeys(probed, 0)
    for _, uf, _, pos, n in _sweep(corpus):
        for pid in probed:
            i = pos[pid]
            if i < n:
                scores[pid] += uf.size[uf.find(i)]
    return scores


def build_dynamic_graph(corpus: Corpus, probe_mode: str = "alg1") -> DynamicGraph:
    """Pick the best probed paper and follow its component through the years.

    Under ``final-component`` the anchor may be published after the first
    corpus year; the graph then starts at the anchor's publication year.
    """
    if not corpus.years:
        raise GraphError("corpus has no years")
    scores = probe_scores(corpus, probe_mode)
    if not scores:
        raise GraphError("probe set is empty")
    best = min(scores, key=lambda p: (-scores[p], p))

    snapshots = []
    for year, uf, ids, pos, n in _sweep(corpus):
        b = pos[best]
        if b >= n:
            continue
        root = uf.find(b)
        nodes = frozenset(ids[i] for i in range(n) if uf.find(i) == root)
        cites = frozenset((pid, c) for pid in nodes for c in corpus.papers[pid].cited_ids)
        snapshots.append(Snapshot(year, nodes, cites))

    for a, b in zip(snapshots, snapshots[1:]):
        if not (a.node_ids <= b.node_ids and a.citations <= b.citations):
            raise GraphError(f"snapshot {b.year} does not contain snapshot {a.year}")

    index = {pid: i for i, pid in enumerate(sorted(snapshots[-1].node_ids))}
    return DynamicGraph(tuple(snapshots), index, best, probe_mode)


def normalize_adjacency(pairs, m: int) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` for the symmetrized 0/1 adjacency of ``pairs`` over ``m`` nodes."""
    pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(m)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(m)])
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m)).tocsr()
    a.data[:] = 1.0  # duplicates (reciprocal citations) collapse to one edge
    a.sort_indices()
    deg = np.diff(a.indptr).astype(np.float64)
    r = np.repeat(np.arange(m), np.diff(a.indptr))
    # one rounding per entry: 1/sqrt(d_i d_j) rather than a product of two roots
    a.data = 1.0 / np.sqrt(deg[r] * deg[a.indices])
    return a


def normalized_adjacency(dynamic_graph: DynamicGraph, year: int) -> NormalizedAdjacency:
    """Normalized adjacency of one snapshot over the full final index.

    Nodes outside the snapshot keep only their self-loop.
    """
    snap = dynamic_graph.snapshot(year)
    idx = dynamic_graph.index
    pairs = [(idx[a], idx[b]) for a, b in snap.citations]
    return NormalizedAdjacency(year, normalize_adjacency(pairs, dynamic_graph.m))


def all_adjacencies(dynamic_graph: DynamicGraph) -> list[sp.csr_matrix]:
    return [normalized_adjacency(dynamic_graph, y).matrix for y in dynamic_graph.years]


def snapshot_stats(
    dynamic_graph: DynamicGraph,
    corpus: Corpus,
    timelines: Mapping[str, CitationTimeline] | None = None,
) -> list[YearStats]:
    """Per-year statistics in the layout of the key-values table.

    ``n_edges`` counts directed in-snapshot citations; ``mean_degree`` is
    ``n_edges / n_nodes``; ``max_degree`` is the largest number of distinct
    in-snapshot neighbours. Citation counts come from the full-corpus timelines.
    """
    if timelines is None:
        timelines = cumulative_citation_counts(corpus)
    rows = []
    for snap in dynamic_graph.snapshots:
        deg: dict[str, int] = dict.fromkeys(snap.node_ids, 0)
        for a, b in snap.edges:
            deg[a] += 1
            deg[b] += 1
        counts = [timelines[p].at(snap.year) for p in snap.node_ids]
        n = len(snap.node_ids)
        e = len(snap.citations)
        rows.append(
            YearStats(
                year=snap.year,
                n_nodes=n,
                n_edges=e,
                mean_degree=e / n if n else 0.0,
                max_degree=max(deg.values(), default=0),
                max_citations=max(counts, default=0),
                avg_citations=float(np.mean(counts)) if counts else 0.0,
            )
        )
    return rows


def stats_tsv(rows: list[YearStats]) -> str:
    header = "\t".join([""] + [str(r.year) for r in rows])
    lines = [header]
    for label, attr, fmt in [
        ("|V|", "n_nodes", "{:d}"),
        ("|E|", "n_edges", "{:d}"),
        ("Mean D", "mean_degree", "{:.2f}"),
        ("Max D", "max_degree", "{:d}"),
        ("Max citation count", "max_citations", "{:d}"),
        ("Avg. citation count", "avg_citations", "{:.2f}"),
    ]:
        lines.append("\t".join([label] + [fmt.format(getattr(r, attr)) for r in rows]))
    return "\n".join(lines) + "\n"


def write_graph(graph: DynamicGraph, out_dir: str | Path, extra_meta: Mapping | None = None) -> None:
    """Export as ``index.tsv``, ``nodes_<year>.txt`` and ``edges_<year>.tsv`` (citing<TAB>cited).

    ``extra_meta`` is merged into ``meta.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "index.tsv", "w", encoding="utf-8") as fh:
        for pid in graph.node_ids:
            fh.write(f"{pid}\t{graph.index[pid]}\n")
    for snap in graph.snapshots:
        with open(out / f"nodes_{snap.year}.txt", "w", encoding="utf-8") as fh:
            for pid in sorted(snap.node_ids):
                fh.write(pid + "\n")
        with open(out / f"edges_{snap.year}.tsv", "w", encoding="utf-8") as fh:
            for a, b in sorted(snap.citations):
                fh.write(f"{a}\t{b}\n")
    meta = {**(extra_meta or {}), "years": graph.years, "best_paper": graph.best_paper, "probe_mode": graph.probe_mode}
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def read_graph(graph_dir: str | Path) -> DynamicGraph:
    d = Path(graph_dir)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    index = {}
    with open(d / "index.tsv", encoding="utf-8") as fh:
        for line in fh:
            pid, i = line.rstrip("\n").split("\t")
            index[pid] = int(i)
    snaps = []
    for year in meta["years"]:
        nodes = frozenset((d / f"nodes_{year}.txt").read_text(encoding="utf-8").split())
        cites = set()
        with open(d / f"edges_{year}.tsv", encoding="utf-8") as fh:
            for line in fh:
                a, b = line.rstrip("\n").split("\t")
                cites.add((a, b))
        snaps.append(Snapshot(year, nodes, frozenset(cites)))
    return DynamicGraph(tuple(snaps), index, meta["best_paper"], meta["probe_mode"])
