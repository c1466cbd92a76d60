import json

import numpy as np
import pytest

from citeflow.corpus import PaperRecord, build_corpus, parse_corpus


def toy_lines():
    rows = [
        {"id": "P1", "year": 2000, "venue": "ACL", "authors": ["A"], "abstract": "graph parsing", "outCitations": []},
        {"id": "P2", "year": 2001, "venue": "Proc. of ACL", "authors": ["A", "B"], "abstract": "neural parsing", "outCitations": ["P1"]},
        {"id": "P3", "year": 2002, "venue": "Wkshp XYZ", "authors": ["C"], "abstract": "", "outCitations": ["P1", "P2"]},
        {"id": "P4", "year": 2002, "venue": "Wkshp XYZ", "authors": ["D"], "abstract": "graph parsing", "outCitations": []},
    ]
    return [json.dumps(r) for r in rows]


TOY_ALIASES = {"ACL": "ACL", "Proc. of ACL": "ACL"}


@pytest.fixture
def toy():
    return parse_corpus(toy_lines())


@pytest.fixture
def toy_aliased():
    from citeflow.corpus import SchemaConfig

    return parse_corpus(toy_lines(), SchemaConfig(aliases=TOY_ALIASES))


def random_corpus(rng, n_papers, n_years, p_cite=0.08, start=1990):
    """Sparse random citations, so several components coexist."""
    years = np.sort(rng.integers(start, start + n_years, size=n_papers))
    ids = [f"Q{i:03d}" for i in rng.permutation(n_papers)]
    records = []
    for i in range(n_papers):
        cited = [ids[j] for j in range(n_papers) if j != i and years[j] <= years[i] and rng.random() < p_cite]
        records.append(PaperRecord(ids[i], int(years[i]), "V", ("A",), "", tuple(cited)))
    return build_corpus(records)


def toy_training_data(seed=0, n_features=3):
    """4 nodes over 3 timesteps: 0 from the start, 1 joins at t=1, 2 and 3 at t=2."""
    from citeflow.dyngraph import normalize_adjacency
    from citeflow.models import TrainingData

    rng = np.random.default_rng(seed)
    edges = [[], [(1, 0)], [(1, 0), (2, 0), (3, 1)]]
    adjs = [normalize_adjacency(e, 4) for e in edges]
    feats = [rng.uniform(0.1, 1.0, size=(4, n_features)) for _ in range(3)]
    mask = np.array([[1, 1, 1], [0, 1, 1], [0, 0, 1], [0, 0, 1]], dtype=bool)
    labels = np.round(rng.uniform(0, 2, size=(4, 3)), 3) * mask
    return TrainingData(adjs, feats, labels, mask, np.array([0, 1]), np.array([2]), np.array([3]))
