"""Node features and labels.

Rank features are dense ranks of citation totals (most cited first) min-max
normalized to [0, 1], so the most cited author or venue maps to 0.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import CitationTimeline, Corpus, VenueKey, cumulative_citation_counts
from .dyngraph import DynamicGraph

FEATURE_NAMES = ("abstract", "author", "venue")
FEATURE_SETS = {
    "abstract": ("abstract",),
    "author": ("author",),
    "venue": ("venue",),
    "author+venue": ("author", "venue"),
    "all": ("abstract", "author", "venue"),
}
DEFAULT_EMBEDDING_WIDTH = 768
_TOKEN = re.compile(r"\w+", re.UNICODE)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingStore:
    vectors: Mapping[str, np.ndarray]
    width: int
    provenance: Mapping[str, str]  # paper id -> "external" | "fallback-hash"

    def __getitem__(self, paper_id: str) -> np.ndarray:
        return self.vectors[paper_id]


@dataclass(frozen=True)
class FeatureConfig:
    feature_set: str = "author"
    rank_ref: str = "rolling"  # "rolling": citations up to t-1; "final": up to the last corpus year

    @property
    def parts(self) -> tuple[str, ...]:
        if self.feature_set not in FEATURE_SETS:
            parts = tuple(self.feature_set.split("+"))
            if not parts or any(p not in FEATURE_NAMES for p in parts):
                raise FeatureError(f"unknown feature set {self.feature_set!r}")
            return tuple(p for p in FEATURE_NAMES if p in parts)
        return FEATURE_SETS[self.feature_set]


@dataclass(frozen=True)
class FeatureTensor:
    years: tuple[int, ...]
    matrices: tuple[np.ndarray, ...]  # one m x n matrix per year
    config: FeatureConfig
    columns: tuple[str, ...]

    @property
    def width(self) -> int:
        return len(self.columns)

    def stack(self) -> np.ndarray:
        return np.stack(self.matrices)


@dataclass(frozen=True)
class LabelMatrix:
    labels: np.ndarray  # m x T, ln(c + 1)
    mask: np.ndarray  # m x T, true from the publication year on
    years: tuple[int, ...]


def dense_rank_normalize(totals: Mapping) -> dict:
    """Dense-rank ``totals`` (highest first, ties share a rank) then min-max to [0, 1].

    All-equal input maps everything to 0.
    """
    if not totals:
        return {}
    distinct = sorted(set(totals.values()), reverse=True)
    rank = {v: r for r, v in enumerate(distinct, 1)}
    lo, hi = 1, len(distinct)
    if hi == lo:
        return dict.fromkeys(totals, 0.0)
    return {k: (rank[v] - lo) / (hi - lo) for k, v in totals.items()}


def _timelines(corpus, timelines):
    return cumulative_citation_counts(corpus) if timelines is None else timelines


def author_citation_totals(corpus: Corpus, year: int, timelines=None) -> dict[str, int]:
    tl = _timelines(corpus, timelines)
    totals: dict[str, int] = {}
    for p in corpus:
        c = tl[p.id].at(year)
        for a in p.author_ids:
            totals[a] = totals.get(a, 0) + c
    return totals


def venue_citation_totals(corpus: Corpus, year: int, timelines=None) -> dict[VenueKey, int]:
    tl = _timelines(corpus, timelines)
    totals: dict[VenueKey, int] = {}
    for p in corpus:
        key = corpus.venue_key(p.id)
        totals[key] = totals.get(key, 0) + tl[p.id].at(year)
    return totals


def author_rank(corpus: Corpus, year: int, timelines: Mapping[str, CitationTimeline] | None = None) -> dict[str, float]:
    """Normalized rank of every corpus author by citations received up to ``year``."""
    return dense_rank_normalize(author_citation_totals(corpus, year, timelines))


def venue_rank(corpus: Corpus, year: int, timelines: Mapping[str, CitationTimeline] | None = None) -> dict[VenueKey, float]:
    """Normalized rank of every (venue, year) key by citations received up to ``year``."""
    return dense_rank_normalize(venue_citation_totals(corpus, year, timelines))


def hash_embedding(text: str, width: int = DEFAULT_EMBEDDING_WIDTH, seed: int = 0) -> np.ndarray:
    """Signed feature hashing of lower-cased word tokens, L2-normalized.

    Empty text gives the zero vector. Uses keyed BLAKE2b, so vectors are stable
    across processes.
    """
    vec = np.zeros(width)
    key = int(seed).to_bytes(8, "little", signed=False)
    for tok in _TOKEN.findall(text.lower()):
        digest = hashlib.blake2b(tok.encode("utf-8"), digest_size=8, key=key).digest()
        h = int.from_bytes(digest, "little")
        vec[h % width] += 1.0 if (h >> 63) & 1 else -1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def read_embedding_file(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    """Parse ``width=<n>`` followed by ``paper_id<TAB>v1,v2,...`` lines."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("width="):
            raise FeatureError(f"{path}: first line must be width=<n>")
        try:
            width = int(first[len("width=") :])
        except ValueError:
            raise FeatureError(f"{path}: bad width header {first!r}") from None
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                pid, values = line.split("\t")
                vec = np.array([float(x) for x in values.split(",")])
            except ValueError:
                raise FeatureError(f"{path}:{lineno}: malformed embedding line") from None
            if vec.shape != (width,):
                raise FeatureError(f"{path}:{lineno}: vector has {vec.size} values, header says {width}")
            vectors[pid] = vec
    return width, vectors


def write_embedding_file(path: str | Path, vectors: Mapping[str, np.ndarray], width: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"width={width}\n")
        for pid in sorted(vectors):
            fh.write(pid + "\t" + ",".join(repr(float(x)) for x in vectors[pid]) + "\n")


def abstract_features(
    corpus: Corpus,
    store_path: str | Path | None = None,
    fallback_seed: int = 0,
    width: int = DEFAULT_EMBEDDING_WIDTH,
) -> EmbeddingStore:
    vectors: dict[str, np.ndarray] = {}
    provenance = {}
    if store_path is not None:
        file_width, external = read_embedding_file(store_path)
        if file_width != width:
            raise FeatureError(f"embedding file width {file_width} does not match configured width {width}")
        for pid, vec in external.items():
            if pid in corpus.papers:
                vectors[pid] = vec
                provenance[pid] = "external"
    for p in corpus:
        if p.id not in vectors:
            vectors[p.id] = hash_embedding(p.abstract, width, fallback_seed)
            provenance[p.id] = "fallback-hash"
    return EmbeddingStore(vectors, width, provenance)


def _author_triplet(authors, ranks) -> list[float]:
    vals = [ranks.get(a, 1.0) for a in authors]
    if not vals:
        return [1.0, 1.0, 1.0]
    return [min(vals), sum(vals) / len(vals), max(vals)]


def assemble_feature_tensor(
    dynamic_graph: DynamicGraph,
    corpus: Corpus,
    config: FeatureConfig,
    embeddings: EmbeddingStore | None = None,
    timelines: Mapping[str, CitationTimeline] | None = None,
) -> FeatureTensor:
    """Per-snapshot node features over the graph's node index.

    Column order is abstract, author [best, mean, worst], venue. Rank columns
    are recomputed per snapshot year; abstract columns are constant.
    """
    parts = config.parts
    if config.rank_ref not in ("rolling", "final"):
        raise FeatureError(f"unknown rank reference {config.rank_ref!r}")
    tl = _timelines(corpus, timelines)
    ids = dynamic_graph.node_ids
    m = len(ids)

    columns: list[str] = []
    abstract_block = None
    if "abstract" in parts:
        if embeddings is None:
            embeddings = abstract_features(corpus)
        abstract_block = np.stack([embeddings[pid] for pid in ids]) if m else np.zeros((0, embeddings.width))
        columns += [f"abstract_{i}" for i in range(embeddings.width)]
    if "author" in parts:
        columns += ["author_best", "author_mean", "author_worst"]
    if "venue" in parts:
        columns += ["venue"]

    last = corpus.years[-1]
    cache: dict[int, np.ndarray] = {}
    matrices = []
    for year in dynamic_graph.years:
        ref = year - 1 if config.rank_ref == "rolling" else last
        if ref not in cache:
            blocks = []
            if abstract_block is not None:
                blocks.append(abstract_block)
            if "author" in parts:
                ranks = author_rank(corpus, ref, tl)
                blocks.append(np.array([_author_triplet(corpus.papers[pid].author_ids, ranks) for pid in ids]).reshape(m, 3))
            if "venue" in parts:
                vr = venue_rank(corpus, ref, tl)
                blocks.append(np.array([vr[corpus.venue_key(pid)] for pid in ids]).reshape(m, 1))
            cache[ref] = np.concatenate(blocks, axis=1)
        matrices.append(cache[ref])
    return FeatureTensor(tuple(dynamic_graph.years), tuple(matrices), config, tuple(columns))


def label_matrix(
    dynamic_graph: DynamicGraph,
    timelines: Mapping[str, CitationTimeline],
    publication_years: Mapping[str, int],
) -> LabelMatrix:
    """``ln(c + 1)`` of cumulative citations per node and snapshot year, with the publication mask."""
    ids = dynamic_graph.node_ids
    years = dynamic_graph.years
    labels = np.zeros((len(ids), len(years)))
    mask = np.zeros((len(ids), len(years)), dtype=bool)
    for i, pid in enumerate(ids):
        if pid not in timelines:
            raise FeatureError(f"no citation timeline for node {pid!r}")
        tl = timelines[pid]
        for j, y in enumerate(years):
            labels[i, j] = math.log(tl.at(y) + 1)
            mask[i, j] = y >= publication_years[pid]
    return LabelMatrix(labels, mask, tuple(years))


def corpus_label_matrix(dynamic_graph: DynamicGraph, corpus: Corpus, timelines=None) -> LabelMatrix:
    tl = _timelines(corpus, timelines)
    return label_matrix(dynamic_graph, tl, {p.id: p.year for p in corpus})


def save_features(out_dir: str | Path, features: FeatureTensor, labels: LabelMatrix) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(
        out / "features.npz",
        X=features.stack(),
        years=np.array(features.years),
        columns=np.array(features.columns),
        feature_set=np.array(features.config.feature_set),
        rank_ref=np.array(features.config.rank_ref),
    )
    np.savez(out / "labels.npz", labels=labels.labels, mask=labels.mask, years=np.array(labels.years))


def load_features(feature_dir: str | Path) -> tuple[FeatureTensor, LabelMatrix]:
    d = Path(feature_dir)
    with np.load(d / "features.npz") as f:
        cfg = FeatureConfig(str(f["feature_set"]), str(f["rank_ref"]))
        X = f["X"]
        ft = FeatureTensor(tuple(int(y) for y in f["years"]), tuple(X), cfg, tuple(str(c) for c in f["columns"]))
    with np.load(d / "labels.npz") as f:
        lm = LabelMatrix(f["labels"], f["mask"], tuple(int(y) for y in f["years"]))
    return ft, lm
