"""Experiment orchestration and the synthetic corpus generator."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus, PaperRecord, VenueKey, build_corpus, cumulative_citation_counts
from .dyngraph import DynamicGraph, all_adjacencies
from .features import (
    EmbeddingStore,
    FeatureConfig,
    LabelMatrix,
    assemble_feature_tensor,
    corpus_label_matrix,
)
from .models import MODEL_KINDS, TrainConfig, TrainingData, mae, predict, train

log = logging.getLogger(__name__)

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
DEFAULT_SEEDS = tuple(range(10))
GAP = "NA"


class ExperimentError(RuntimeError):
    pass


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    @property
    def train_val(self) -> np.ndarray:
        return np.array(sorted(self.train + self.val), dtype=np.int64)

    def to_text(self) -> str:
        part = {}
        for name in ("train", "val", "test"):
            for i in getattr(self, name):
                part[i] = name
        lines = [f"# seed={self.seed}"] + [f"{i}\t{part[i]}" for i in sorted(part)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SplitAssignment":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# seed="):
            raise ValueError("split file must start with '# seed=<n>'")
        seed = int(lines[0][len("# seed=") :])
        parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
        for line in lines[1:]:
            if line.strip():
                i, name = line.split("\t")
                parts[name].append(int(i))
        return cls(seed, tuple(parts["train"]), tuple(parts["val"]), tuple(parts["test"]))


def split_nodes(dynamic_graph: DynamicGraph | int, seed: int = 0) -> SplitAssignment:
    """Seeded 60/20/20 node split.

    Validation and test each get ``round(0.2 m)`` nodes and training the rest.
    """
    m = dynamic_graph if isinstance(dynamic_graph, int) else dynamic_graph.m
    if m < 5:
        raise ValueError(f"need at least 5 nodes to split, got {m}")
    order = np.random.default_rng(seed).permutation(m)
    n_val = n_test = int(round(SPLIT_FRACTIONS[1] * m))
    n_train = m - n_val - n_test
    train_ = tuple(sorted(int(i) for i in order[:n_train]))
    val = tuple(sorted(int(i) for i in order[n_train : n_train + n_val]))
    test = tuple(sorted(int(i) for i in order[n_train + n_val :]))
    return SplitAssignment(seed, train_, val, test)


def load_or_create_split(path: str | Path, m: int, seed: int = 0) -> SplitAssignment:
    """Reuse the split stored at ``path`` or create and persist a new one."""
    path = Path(path)
    if path.exists():
        split = SplitAssignment.from_text(path.read_text(encoding="utf-8"))
        if len(split.train) + len(split.val) + len(split.test) != m:
            raise ValueError(f"{path}: stored split does not cover {m} nodes")
        return split
    split = split_nodes(m, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(split.to_text(), encoding="utf-8")
    return split


# ---------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthConfig:
    n_years: int = 10
    papers_per_year: int = 200
    exponent: float = 0.5
    n_venues: int = 6
    author_pool: int = 400
    authors_per_paper: tuple[int, int] = (1, 4)
    citations_per_paper: tuple[int, int] = (3, 10)
    quality_strength: float = 1.5
    aging: float = 0.5
    start_year: int = 2000
    seed: int = 0

    def __post_init__(self):
        for f in ("n_years", "papers_per_year", "n_venues", "author_pool"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        lo, hi = self.authors_per_paper
        if not 1 <= lo <= hi <= self.author_pool:
            raise ValueError("authors_per_paper must satisfy 1 <= lo <= hi <= author_pool")
        lo, hi = self.citations_per_paper
        if not 1 <= lo <= hi:
            raise ValueError("citations_per_paper must satisfy 1 <= lo <= hi")
        if self.exponent < 0 or self.quality_strength < 0 or self.aging < 0:
            raise ValueError("exponent, quality_strength and aging must be non-negative")


_WORDS = (
    "graph neural network parsing translation semantic syntax embedding attention corpus "
    "dialogue speech retrieval question answering summarization tagging entity relation "
    "sentiment lexical morphology generation reinforcement policy kernel bayesian inference "
    "convex optimization clustering topic vision planning logic knowledge reasoning"
).split()


def attachment_weights(
    citations: np.ndarray,
    fitness: np.ndarray,
    exponent: float,
    quality_strength: float,
    age: np.ndarray | None = None,
    aging: float = 0.5,
) -> np.ndarray:
    """Unnormalized probability of citing each earlier paper.

    ``(citations + 1)^exponent * fitness^quality_strength * exp(-aging * age)``.
    """
    w = (citations + 1.0) ** exponent * fitness**quality_strength
    if age is not None and aging:
        w = w * np.exp(-aging * age)
    return w


def generate_synthetic_corpus(config: SynthConfig = SynthConfig()) -> Corpus:
    """Grow a citation corpus year by year with quality-biased preferential attachment.

    Each paper cites between ``citations_per_paper`` earlier papers (earlier in
    arrival order, so same-year citations point backwards). Authors and venues
    carry a latent quality; a paper's fitness is its venue quality times its
    best author's quality. ``aging`` discounts older papers exponentially per year.
    """
    rng = np.random.default_rng(config.seed)
    author_q = rng.lognormal(0.0, 0.75, size=config.author_pool)
    venue_q = rng.lognormal(0.0, 0.5, size=config.n_venues)
    topic = [rng.permutation(len(_WORDS))[:8] for _ in range(config.n_venues)]

    n_total = config.n_years * config.papers_per_year
    cites = np.zeros(n_total)
    fitness = np.zeros(n_total)
    born = np.zeros(n_total)
    records = []
    i = 0
    for year in range(config.start_year, config.start_year + config.n_years):
        for _ in range(config.papers_per_year):
            venue = int(rng.integers(config.n_venues))
            n_auth = int(rng.integers(config.authors_per_paper[0], config.authors_per_paper[1] + 1))
            authors = np.sort(rng.choice(config.author_pool, size=n_auth, replace=False))
            fitness[i] = venue_q[venue] * author_q[authors].max()
            born[i] = year
            cited: list[int] = []
            if i > 0:
                k = int(rng.integers(config.citations_per_paper[0], config.citations_per_paper[1] + 1))
                k = min(k, i)
                w = attachment_weights(
                    cites[:i], fitness[:i], config.exponent, config.quality_strength, year - born[:i], config.aging
                )
                cited = sorted(int(j) for j in rng.choice(i, size=k, replace=False, p=w / w.sum()))
                cites[cited] += 1
            words = rng.choice(topic[venue], size=12)
            records.append(
                PaperRecord(
                    id=f"P{i:06d}",
                    year=year,
                    venue_raw=f"V{venue}",
                    author_ids=tuple(f"A{a:04d}" for a in authors),
                    abstract=" ".join(_WORDS[w] for w in words),
                    cited_ids=tuple(f"P{j:06d}" for j in cited),
                )
            )
            i += 1
    return build_corpus(records)


# ------------------------------------------------------------ experiments


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str = "gcn-lstm"
    feature_set: str = "author"
    years_back: int | None = 10
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    split_seed: int = 0
    rank_ref: str = "rolling"
    train: TrainConfig = TrainConfig()

    @property
    def cell_name(self) -> str:
        yb = "all" if self.years_back is None else str(self.years_back)
        return f"{self.model_kind}__{self.feature_set}__{yb}y"


@dataclass
class ExperimentReport:
    model_kind: str
    feature_set: str
    years_back: int | None
    seeds: list[int]
    seed_mae: list[float]
    curves: list[list[float | None]]
    years: list[int]
    mean: float = float("nan")
    std: float = float("nan")
    status: str = "complete"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls(**json.loads(text))


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def prepare_data(
    corpus: Corpus,
    graph: DynamicGraph,
    feature_set: str,
    years_back: int | None,
    split: SplitAssignment,
    embeddings: EmbeddingStore | None = None,
    rank_ref: str = "rolling",
    timelines=None,
) -> tuple[TrainingData, DynamicGraph, LabelMatrix]:
    """Window the graph to its final ``years_back`` snapshots and build model inputs.

    Labels in the window keep the cumulative counts accumulated before it.
    """
    window = graph.last(years_back)
    tl = cumulative_citation_counts(corpus) if timelines is None else timelines
    ft = assemble_feature_tensor(window, corpus, FeatureConfig(feature_set, rank_ref), embeddings, tl)
    lm = corpus_label_matrix(window, corpus, tl)
    data = TrainingData(
        adjacencies=all_adjacencies(window),
        features=list(ft.matrices),
        labels=lm.labels,
        mask=lm.mask,
        train_idx=np.array(split.train, dtype=np.int64),
        val_idx=np.array(split.val, dtype=np.int64),
        test_idx=np.array(split.test, dtype=np.int64),
    )
    return data, window, lm


def per_timestep_mae(predictions, labels, mask, split, years) -> list[tuple[int, float | None]]:
    """MAE of each timestep over masked cells of the ``split`` nodes; ``None`` marks a gap."""
    idx = np.asarray(split, dtype=np.int64)
    err = np.abs(np.asarray(predictions) - np.asarray(labels))[idx]
    msk = np.asarray(mask, dtype=bool)[idx]
    curve = []
    for t, year in enumerate(years):
        cells = msk[:, t]
        curve.append((int(year), float(err[cells, t].mean()) if cells.any() else None))
    return curve


def curve_tsv(curve, header=("year", "mae")) -> str:
    lines = ["\t".join(header)]
    for year, value in curve:
        lines.append(f"{year}\t{GAP if value is None else repr(value)}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class VenueRow:
    venue: VenueKey
    mae: float
    avg_degree: float
    n: int


def venue_mae_table(predictions, labels, mask, corpus: Corpus, graph: DynamicGraph, node_subset=None) -> list[VenueRow]:
    """Per (venue, year) mean of per-paper MAEs, sorted ascending.

    ``avg_degree`` is the mean number of distinct neighbours in the final snapshot.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    ids = graph.node_ids
    degree = dict.fromkeys(ids, 0)
    for a, b in graph.snapshots[-1].edges:
        degree[a] += 1
        degree[b] += 1
    nodes = range(len(ids)) if node_subset is None else node_subset
    groups: dict[VenueKey, list[tuple[float, int]]] = {}
    for i in nodes:
        cells = mask[i]
        if not cells.any():
            continue
        paper_mae = float(np.abs(predictions[i] - labels[i])[cells].mean())
        groups.setdefault(corpus.venue_key(ids[i]), []).append((paper_mae, degree[ids[i]]))
    rows = [
        VenueRow(key, float(np.mean([e for e, _ in v])), float(np.mean([d for _, d in v])), len(v))
        for key, v in groups.items()
    ]
    rows.sort(key=lambda r: (r.mae, r.venue))
    return rows


def venue_tsv(rows: Sequence[VenueRow]) -> str:
    lines = ["rank\tvenue\tmae\tavg_degree\tn"]
    for k, r in enumerate(rows, 1):
        lines.append(f"{k}\t{r.venue}\t{r.mae:.5f}\t{r.avg_degree:.2f}\t{r.n}")
    return "\n".join(lines) + "\n"


def run_experiment(
    config: ExperimentConfig,
    corpus: Corpus,
    graph: DynamicGraph,
    split: SplitAssignment | None = None,
    out_dir: str | Path | None = None,
    embeddings: EmbeddingStore | None = None,
) -> ExperimentReport:
    """Train and test one (model, feature set, window) cell once per seed.

    Per-seed results go to ``out_dir/seed_<s>.json`` as they finish; if a run
    fails, the partial report is written before :class:`ExperimentError` is raised.
    """
    if config.model_kind not in MODEL_KINDS:
        raise ExperimentError(f"unknown model kind {config.model_kind!r}")
    split = split or split_nodes(graph, config.split_seed)
    data, window, lm = prepare_data(corpus, graph, config.feature_set, config.years_back, split, embeddings, config.rank_ref)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    report = ExperimentReport(config.model_kind, config.feature_set, config.years_back, [], [], [], list(window.years))
    for seed in config.seeds:
        try:
            result = train(config.model_kind, data, replace(config.train, seed=seed))
            preds = predict(config.model_kind, data, result.params, config.train.batch_size, config.train.activation)
        except Exception as exc:
            report.status = f"failed at seed {seed}: {exc}"
            if report.seed_mae:
                report.mean, report.std = aggregate(report.seed_mae)
            if out is not None:
                (out / "report.json").write_text(report.to_json(), encoding="utf-8")
            raise ExperimentError(f"{config.cell_name}: seed {seed} failed") from exc
        test_mae = mae(preds, data.labels, data.mask, data.test_idx)
        curve = per_timestep_mae(preds, data.labels, data.mask, data.test_idx, window.years)
        report.seeds.append(int(seed))
        report.seed_mae.append(test_mae)
        report.curves.append([v for _, v in curve])
        log.info("%s seed %d: test MAE %.4f (best epoch %d)", config.cell_name, seed, test_mae, result.best_epoch)
        if out is not None:
            record = {
                "seed": int(seed),
                "test_mae": test_mae,
                "best_epoch": result.best_epoch,
                "best_val_mae": result.best_val_mae,
                "curve": [v for _, v in curve],
                "history": [asdict(h) for h in result.history],
            }
            (out / f"seed_{seed}.json").write_text(json.dumps(record, indent=2), encoding="utf-8")
            if seed == config.seeds[0]:
                rows = venue_mae_table(preds, data.labels, data.mask, corpus, window, data.test_idx)
                (out / "venues.tsv").write_text(venue_tsv(rows), encoding="utf-8")
    report.mean, report.std = aggregate(report.seed_mae)
    if out is not None:
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report


# ------------------------------------------------------------- reporting


def results_table_tsv(reports: Sequence[ExperimentReport]) -> str:
    """One block per window: feature sets as rows, model kinds as columns, ``mean ± std``."""
    out = []
    for yb in sorted({r.years_back for r in reports}, key=lambda v: (v is None, v)):
        sub = [r for r in reports if r.years_back == yb]
        kinds = [k for k in MODEL_KINDS if any(r.model_kind == k for r in sub)]
        sets = sorted({r.feature_set for r in sub})
        out.append(f"# years_back={'all' if yb is None else yb}")
        out.append("\t".join(["feature_set"] + kinds))
        for fs in sets:
            cells = []
            for k in kinds:
                match = [r for r in sub if r.model_kind == k and r.feature_set == fs]
                cells.append(f"{match[0].mean:.4f} ± {match[0].std:.4f}" if match else "")
            out.append("\t".join([fs] + cells))
    return "\n".join(out) + "\n"


def curves_tsv(reports: Sequence[ExperimentReport]) -> str:
    """Seed-averaged per-timestep MAE of every cell."""
    lines = ["model\tfeature_set\tyears_back\tyear\tmae"]
    for r in reports:
        for t, year in enumerate(r.years):
            vals = [c[t] for c in r.curves if c[t] is not None]
            value = GAP if not vals else repr(float(np.mean(vals)))
            lines.append(f"{r.model_kind}\t{r.feature_set}\t{r.years_back}\t{year}\t{value}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _int_list(text: str) -> list[int]:
    values = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            values.extend(range(int(lo), int(hi) + 1))
        elif part:
            values.append(int(part))
    return values


def _pair(text: str) -> tuple[int, int]:
    vals = _int_list(text)
    return (vals[0], vals[-1])


def synth_config_from_kv(kv: Mapping[str, str]) -> SynthConfig:
    kwargs = {}
    types = {f.name: f.type for f in fields(SynthConfig)}
    for key, value in kv.items():
        if key not in types:
            raise ValueError(f"unknown synth option {key!r}")
        t = types[key]
        if "tuple" in str(t):
            kwargs[key] = _pair(value)
        elif "float" in str(t):
            kwargs[key] = float(value)
        else:
            kwargs[key] = int(value)
    return SynthConfig(**kwargs)


@dataclass
class Suite:
    corpus: str
    graph: str | None = None
    probe: str = "alg1"
    models: list[str] = field(default_factory=lambda: ["gcn-lstm", "lstm", "gcn", "mean"])
    feature_sets: list[str] = field(default_factory=lambda: ["author"])
    years_back: list[int | None] = field(default_factory=lambda: [10])
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    split_seed: int = 0
    rank_ref: str = "rolling"
    embeddings: str | None = None
    fallback_seed: int = 0
    train: TrainConfig = TrainConfig()


def suite_from_kv(kv: Mapping[str, str]) -> Suite:
    if "corpus" not in kv:
        raise ValueError("suite needs a 'corpus' entry")
    train_keys = {f.name for f in fields(TrainConfig)} - {"seed"}
    tc = {}
    for key in train_keys & kv.keys():
        tc[key] = kv[key] if key == "activation" else (float(kv[key]) if key == "lr" else int(kv[key]))
    years = [None if v.strip() == "all" else int(v) for v in kv.get("years_back", "10").split(",")]
    return Suite(
        corpus=kv["corpus"],
        graph=kv.get("graph"),
        probe=kv.get("probe", "alg1"),
        models=[s.strip() for s in kv.get("models", "gcn-lstm,lstm,gcn,mean").split(",")],
        feature_sets=[s.strip() for s in kv.get("feature_sets", "author").split(",")],
        years_back=years,
        seeds=_int_list(kv.get("seeds", "0-9")),
        split_seed=int(kv.get("split_seed", 0)),
        rank_ref=kv.get("rank_ref", "rolling"),
        embeddings=kv.get("embeddings"),
        fallback_seed=int(kv.get("fallback_seed", 0)),
        train=TrainConfig(**tc),
    )
