"""
Cross-validation on the Diabetes table
======================================

Diabetes ships with scikit-learn, so this runs offline.  One repeat of
5-fold CV at depth 4 with a reduced number of trees.
"""

import tempfile

from metaboost.data import fetch_dataset, load_manifest
from metaboost.experiments import experiment3

directory = tempfile.mkdtemp()
fetch_dataset(load_manifest()["diabetes"], directory)

summary, folds = experiment3(datasets=("diabetes",), depths=(4,), n_trees=30, repeats=1,
                             directory=directory)
for row in summary:
    print(f"{row['method']:14s} depth {row['d_max']}  MSE {row['mean_mse']:.3f} "
          f"+- {row['stderr']:.3f}")

# every per-fold row carries the seed and a config hash
print(folds[0])
