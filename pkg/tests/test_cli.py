import json

import numpy as np
import pytest

from citeflow.cli import main
from citeflow.corpus import read_corpus
from citeflow.tensor import load_checkpoint

from conftest import toy_lines


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "synth.cfg"
    cfg.write_text("n_years = 4\npapers_per_year = 30\nseed = 2\n", encoding="utf-8")
    return tmp_path, cfg


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_ingest_with_aliases_and_filter(tmp_path, capsys):
    raw = tmp_path / "raw.jsonl"
    raw.write_text("\n".join(toy_lines()) + "\n", encoding="utf-8")
    aliases = tmp_path / "aliases.tsv"
    aliases.write_text("ACL\tACL\nProc. of ACL\tACL\n", encoding="utf-8")
    out = tmp_path / "corpus.jsonl"
    code, text, _ = run(capsys, "ingest", "--input", raw, "--aliases", aliases, "--venues", "ACL", "--out", out)
    assert code == 0
    assert text.splitlines()[:2] == ["papers\t2", "edges\t1"]
    assert sorted(read_corpus(out).papers) == ["P1", "P2"]


def test_bad_input_reports_line(tmp_path, capsys):
    raw = tmp_path / "raw.jsonl"
    raw.write_text(toy_lines()[0] + "\n{oops\n", encoding="utf-8")
    code, _, err = run(capsys, "ingest", "--input", raw, "--out", tmp_path / "c.jsonl")
    assert code == 1 and "line 2" in err


def test_full_pipeline(workspace, capsys):
    tmp, cfg = workspace
    corpus, graph, feats, ckpt = tmp / "c.jsonl", tmp / "graph", tmp / "feats", tmp / "m.ckpt"
    assert run(capsys, "synth", "--config", cfg, "--out", corpus)[0] == 0
    assert run(capsys, "build-graph", "--corpus", corpus, "--probe", "alg1", "--years-back", "all", "--out", graph)[0] == 0
    code, text, _ = run(capsys, "stats", "--graph", graph)
    assert code == 0 and text.splitlines()[1].startswith("|V|\t")
    assert run(capsys, "features", "--graph", graph, "--set", "author+venue", "--out", feats)[0] == 0

    args = ["train", "--graph", graph, "--features", feats, "--model", "gcn-lstm", "--years-back", "3", "--seed", "1"]
    args += ["--max-epochs", "5", "--patience", "2", "--gcn-hidden", "8", "--lstm-hidden", "4", "--out", ckpt]
    code, text, _ = run(capsys, *args)
    assert code == 0
    params, meta = load_checkpoint(ckpt)
    assert meta["model"] == "gcn-lstm" and meta["years_back"] == 3
    assert params["gcn.w0"].shape == (4, 8) and params["head.w"].shape == (4, 1)
    split_file = graph / "split_0.tsv"
    assert split_file.exists()
    before = split_file.read_bytes()

    code, text, _ = run(capsys, "evaluate", "--ckpt", ckpt, "--split", "val")
    lines = text.splitlines()
    assert code == 0 and lines[0] == "year\tmae" and lines[1].startswith("overall\t") and len(lines) == 5
    assert float(lines[1].split("\t")[1]) == pytest.approx(meta["best_val_mae"], abs=1e-12)
    assert split_file.read_bytes() == before

    assert run(capsys, "train", "--graph", graph, "--features", feats, "--model", "mean", "--out", tmp / "mean.ckpt")[0] == 0
    code, text, _ = run(capsys, "evaluate", "--ckpt", tmp / "mean.ckpt")
    assert code == 0 and len(text.splitlines()) == 6


def test_experiment_and_report(workspace, capsys):
    tmp, cfg = workspace
    corpus = tmp / "c.jsonl"
    run(capsys, "synth", "--config", cfg, "--out", corpus)
    suite = tmp / "suite.cfg"
    suite.write_text(
        "corpus = c.jsonl\nmodels = gcn, mean\nfeature_sets = venue\nyears_back = 3\nseeds = 0-1\n"
        "max_epochs = 4\npatience = 2\ngcn_hidden = 8\nlstm_hidden = 4\n",
        encoding="utf-8",
    )
    out = tmp / "runs"
    code, _, err = run(capsys, "experiment", "--suite", suite, "--out", out)
    assert code == 0, err
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == ["gcn__venue__3y", "mean__venue__3y"]
    results = (out / "results.tsv").read_text().splitlines()
    assert results[1] == "feature_set\tgcn\tmean"
    code, text, _ = run(capsys, "report", "--dir", out)
    assert code == 0 and text.splitlines() == results
    assert (out / "curves.tsv").read_text().count("\n") == 1 + 2 * 3
    assert (out / "venues.tsv").read_text().startswith("cell\trank\tvenue")
    report = json.loads((out / "mean__venue__3y" / "report.json").read_text())
    assert report["std"] == 0.0


def test_stats_needs_corpus(tmp_path, capsys):
    from citeflow.corpus import parse_corpus
    from citeflow.dyngraph import build_dynamic_graph, write_graph

    write_graph(build_dynamic_graph(parse_corpus(toy_lines())), tmp_path / "g")
    code, _, err = run(capsys, "stats", "--graph", tmp_path / "g")
    assert code == 1 and "--corpus" in err
