"""
Rank features and log-citation labels
=====================================

Authors and venues are ranked by how often their papers were cited so
far. Each node gets a [best, mean, worst] author rank and a venue rank per
year; labels are ln(c + 1) of the cumulative citation count.
"""

import numpy as np

from citeflow.dyngraph import build_dynamic_graph
from citeflow.features import FeatureConfig, assemble_feature_tensor, corpus_label_matrix, dense_rank_normalize
from citeflow.harness import SynthConfig, generate_synthetic_corpus

# dense ranking: ties share a rank, then min-max to [0, 1] with the best at 0
print(dense_rank_normalize({"A": 10, "B": 10, "C": 5, "D": 0}))

corpus = generate_synthetic_corpus(SynthConfig(n_years=5, papers_per_year=60, seed=3))
graph = build_dynamic_graph(corpus)

rolling = assemble_feature_tensor(graph, corpus, FeatureConfig("author+venue"))
final = assemble_feature_tensor(graph, corpus, FeatureConfig("author+venue", rank_ref="final"))
print("columns:", rolling.columns)

# rolling ranks only see citations up to the previous year
for t, year in enumerate(rolling.years):
    x = rolling.matrices[t]
    print(year, "mean ranks", np.round(x.mean(axis=0), 3))
print("final-reference ranks are constant over time:",
      all(np.array_equal(m, final.matrices[0]) for m in final.matrices))

labels = corpus_label_matrix(graph, corpus)
print("label matrix", labels.labels.shape, "masked-in cells", int(labels.mask.sum()))

# papers that end up well cited tend to have good (low) venue ranks
last = rolling.matrices[-1][:, -1]
top = labels.labels[:, -1] > np.quantile(labels.labels[:, -1], 0.9)
print("venue rank, top decile %.3f vs rest %.3f" % (last[top].mean(), last[~top].mean()))
