"""``citeflow`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import CorpusError, SchemaConfig, filter_by_venues, load_alias_table, read_corpus, write_corpus
from .dyngraph import PROBE_MODES, GraphError, all_adjacencies, build_dynamic_graph, read_graph, snapshot_stats, stats_tsv, write_graph
from .features import (
    DEFAULT_EMBEDDING_WIDTH,
    FEATURE_SETS,
    FeatureConfig,
    FeatureError,
    abstract_features,
    assemble_feature_tensor,
    corpus_label_matrix,
    load_features,
    save_features,
)
from .harness import (
    ExperimentConfig,
    ExperimentError,
    ExperimentReport,
    curve_tsv,
    curves_tsv,
    generate_synthetic_corpus,
    load_or_create_split,
    parse_kv,
    per_timestep_mae,
    results_table_tsv,
    run_experiment,
    suite_from_kv,
    synth_config_from_kv,
)
from .models import MODEL_KINDS, TrainConfig, TrainingData, TrainingDiverged, mae, predict, train
from .tensor import NonFiniteError, load_checkpoint, save_checkpoint

log = logging.getLogger("citeflow")


def _years_back(text: str) -> int | None:
    if text == "all":
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("years-back must be positive or 'all'")
    return value


def _graph_corpus(graph_dir: Path, override: str | None):
    if override:
        return read_corpus(override)
    meta = json.loads((graph_dir / "meta.json").read_text(encoding="utf-8"))
    if "corpus" not in meta:
        raise GraphError(f"{graph_dir}/meta.json does not name a corpus; pass --corpus")
    return read_corpus(meta["corpus"])


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    aliases = load_alias_table(args.aliases) if args.aliases else None
    corpus = read_corpus(args.input, SchemaConfig(aliases=aliases))
    if args.venues:
        corpus = filter_by_venues(corpus, [v.strip() for v in args.venues.split(",") if v.strip()])
    write_corpus(corpus, args.out)
    d = corpus.diagnostics
    print(
        f"papers\t{len(corpus)}\nedges\t{corpus.edge_count()}\ndangling\t{d.dangling_edges}\n"
        f"time_travel\t{d.time_travel_edges}\nself_citations\t{d.self_citations}\nduplicates\t{d.duplicate_citations}"
    )
    return 0


def cmd_build_graph(args) -> int:
    corpus = read_corpus(args.corpus)
    graph = build_dynamic_graph(corpus, args.probe).last(args.years_back)
    write_graph(graph, args.out, {"corpus": str(Path(args.corpus).resolve())})
    print(f"best_paper\t{graph.best_paper}\nnodes\t{graph.m}\nyears\t{graph.years[0]}-{graph.years[-1]}")
    return 0


def cmd_stats(args) -> int:
    graph_dir = Path(args.graph)
    graph = read_graph(graph_dir)
    sys.stdout.write(stats_tsv(snapshot_stats(graph, _graph_corpus(graph_dir, args.corpus))))
    return 0


def cmd_features(args) -> int:
    graph_dir = Path(args.graph)
    graph = read_graph(graph_dir)
    corpus = read_corpus(args.corpus) if args.corpus else _graph_corpus(graph_dir, None)
    config = FeatureConfig(args.set, args.rank_ref)
    store = None
    if "abstract" in config.parts:
        store = abstract_features(corpus, args.embeddings, args.fallback_seed, args.width)
    ft = assemble_feature_tensor(graph, corpus, config, store)
    save_features(args.out, ft, corpus_label_matrix(graph, corpus))
    print(f"width\t{ft.width}\ntimesteps\t{len(ft.years)}\nnodes\t{graph.m}")
    return 0


def _load_inputs(graph_dir: Path, feature_dir: Path, years_back: int | None, split_seed: int):
    graph = read_graph(graph_dir).last(years_back)
    ft, lm = load_features(feature_dir)
    try:
        cols = [ft.years.index(y) for y in graph.years]
    except ValueError:
        raise FeatureError(f"features in {feature_dir} do not cover graph years {graph.years}") from None
    split = load_or_create_split(graph_dir / f"split_{split_seed}.tsv", graph.m, split_seed)
    data = TrainingData(
        adjacencies=all_adjacencies(graph),
        features=[ft.matrices[c] for c in cols],
        labels=lm.labels[:, cols],
        mask=lm.mask[:, cols],
        train_idx=np.array(split.train, dtype=np.int64),
        val_idx=np.array(split.val, dtype=np.int64),
        test_idx=np.array(split.test, dtype=np.int64),
    )
    return graph, data


def cmd_train(args) -> int:
    graph_dir, feature_dir = Path(args.graph).resolve(), Path(args.features).resolve()
    graph, data = _load_inputs(graph_dir, feature_dir, args.years_back, args.split_seed)
    config = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        seed=args.seed,
        activation=args.activation,
        gcn_hidden=args.gcn_hidden,
        lstm_hidden=args.lstm_hidden,
    )
    result = train(args.model, data, config)
    meta = {
        "model": args.model,
        "graph": str(graph_dir),
        "features": str(feature_dir),
        "years_back": args.years_back,
        "split_seed": args.split_seed,
        "train_config": asdict(config),
        "best_epoch": result.best_epoch,
        "best_val_mae": result.best_val_mae,
        "epochs_run": len(result.history),
    }
    save_checkpoint(args.out, result.params, meta)
    print(f"best_epoch\t{result.best_epoch}\nbest_val_mae\t{result.best_val_mae!r}\nepochs\t{len(result.history)}")
    return 0


def cmd_evaluate(args) -> int:
    params, meta = load_checkpoint(args.ckpt)
    graph_dir = Path(args.graph or meta["graph"])
    feature_dir = Path(args.features or meta["features"])
    graph, data = _load_inputs(graph_dir, feature_dir, meta["years_back"], meta["split_seed"])
    tc = meta["train_config"]
    preds = predict(meta["model"], data, params, tc["batch_size"], tc["activation"])
    idx = {"train": data.train_idx, "val": data.val_idx, "test": data.test_idx}[args.split]
    curve = per_timestep_mae(preds, data.labels, data.mask, idx, graph.years)
    text = curve_tsv([("overall", mae(preds, data.labels, data.mask, idx))] + curve)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    kv = parse_kv(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    corpus = generate_synthetic_corpus(synth_config_from_kv(kv))
    write_corpus(corpus, args.out)
    print(f"papers\t{len(corpus)}\nedges\t{corpus.edge_count()}")
    return 0


def cmd_experiment(args) -> int:
    suite_path = Path(args.suite)
    suite = suite_from_kv(parse_kv(suite_path.read_text(encoding="utf-8")))
    base = suite_path.parent

    def resolve(p):
        return None if p is None else (Path(p) if Path(p).is_absolute() else base / p)

    corpus = read_corpus(resolve(suite.corpus))
    graph = read_graph(resolve(suite.graph)) if suite.graph else build_dynamic_graph(corpus, suite.probe)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = load_or_create_split(out / "split.tsv", graph.m, suite.split_seed)
    store = None
    if any("abstract" in FeatureConfig(fs).parts for fs in suite.feature_sets):
        store = abstract_features(corpus, resolve(suite.embeddings), suite.fallback_seed)
    failures = 0
    for yb in suite.years_back:
        for fs in suite.feature_sets:
            for kind in suite.models:
                cfg = ExperimentConfig(kind, fs, yb, tuple(suite.seeds), suite.split_seed, suite.rank_ref, suite.train)
                try:
                    r = run_experiment(cfg, corpus, graph, split, out / cfg.cell_name, store)
                    log.info("%s: %.4f ± %.4f", cfg.cell_name, r.mean, r.std)
                except ExperimentError as exc:
                    failures += 1
                    log.error("%s (%s)", exc, exc.__cause__)
    _write_reports(out)
    return 1 if failures else 0


def _write_reports(directory: Path) -> str:
    reports, venue_lines = [], ["cell\trank\tvenue\tmae\tavg_degree\tn"]
    for cell in sorted(p for p in directory.iterdir() if (p / "report.json").exists()):
        reports.append(ExperimentReport.from_json((cell / "report.json").read_text(encoding="utf-8")))
        venues = cell / "venues.tsv"
        if venues.exists():
            venue_lines += [f"{cell.name}\t{line}" for line in venues.read_text(encoding="utf-8").splitlines()[1:]]
    if not reports:
        raise ExperimentError(f"no report.json files under {directory}")
    table = results_table_tsv(reports)
    (directory / "results.tsv").write_text(table, encoding="utf-8")
    (directory / "curves.tsv").write_text(curves_tsv(reports), encoding="utf-8")
    (directory / "venues.tsv").write_text("\n".join(venue_lines) + "\n", encoding="utf-8")
    return table


def cmd_report(args) -> int:
    sys.stdout.write(_write_reports(Path(args.dir)))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="citeflow", description="Citation trajectory prediction on dynamic citation graphs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate, canonicalize and filter a JSONL dump")
    s.add_argument("--input", required=True)
    s.add_argument("--aliases", help="raw<TAB>canonical venue table")
    s.add_argument("--venues", help="comma-separated canonical venues to keep")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("build-graph", help="build the dynamic graph")
    s.add_argument("--corpus", required=True)
    s.add_argument("--probe", choices=PROBE_MODES, default="alg1")
    s.add_argument("--years-back", type=_years_back, default=None, metavar="N|all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("stats", help="per-year graph statistics as TSV")
    s.add_argument("--graph", required=True)
    s.add_argument("--corpus", help="defaults to the corpus recorded by build-graph")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("features", help="assemble node features and labels")
    s.add_argument("--graph", required=True)
    s.add_argument("--corpus")
    s.add_argument("--set", choices=sorted(FEATURE_SETS), default="author")
    s.add_argument("--embeddings")
    s.add_argument("--fallback-seed", type=int, default=0)
    s.add_argument("--width", type=int, default=DEFAULT_EMBEDDING_WIDTH, help="abstract embedding width")
    s.add_argument("--rank-ref", choices=("rolling", "final"), default="rolling")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train one model and write a checkpoint")
    s.add_argument("--graph", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--model", choices=MODEL_KINDS, default="gcn-lstm")
    s.add_argument("--years-back", type=_years_back, default=None, metavar="N|all")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-seed", type=int, default=0)
    d = TrainConfig()
    s.add_argument("--lr", type=float, default=d.lr)
    s.add_argument("--batch-size", type=int, default=d.batch_size)
    s.add_argument("--max-epochs", type=int, default=d.max_epochs)
    s.add_argument("--patience", type=int, default=d.patience)
    s.add_argument("--activation", choices=("relu", "tanh"), default=d.activation)
    s.add_argument("--gcn-hidden", type=int, default=d.gcn_hidden)
    s.add_argument("--lstm-hidden", type=int, default=d.lstm_hidden)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="overall and per-timestep MAE of a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.add_argument("--graph", help="override the graph directory stored in the checkpoint")
    s.add_argument("--features", help="override the feature directory stored in the checkpoint")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--config", help="key = value file; defaults to the shipped preset")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("experiment", help="run a suite of experiment cells")
    s.add_argument("--suite", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="collect experiment reports into TSV tables")
    s.add_argument("--dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, GraphError, FeatureError, NonFiniteError, TrainingDiverged, ExperimentError, ValueError, OSError) as exc:
        print(f"citeflow: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
