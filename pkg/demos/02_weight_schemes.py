"""
Boosted meta-trees on synthetic data
====================================

Sample a true model tree over ten binary features, draw a training and a
test set from it, and compare the weighting schemes with plain GBDT.
"""

import numpy as np

from metaboost import train_method
from metaboost.ensemble import ALL_METHODS, mse
from metaboost.synthetic import TRUE_PRIOR, sample_dataset, sample_true_tree

rng = np.random.default_rng(1)
truth = sample_true_tree(rng, K=10, d_max_star=3, g_star=0.9)
print("true tree depth", truth.depth, "split features", truth.internal_features())

X, y = sample_dataset(rng, truth, 1000)
X_test, y_test = sample_dataset(rng, truth, 2000)
print(f"noise floor (risk of the true mean) {truth.noise_floor():.4f}")
print(f"empirical risk of the true mean    {mse(y_test, truth.mean(X_test)):.4f}")

# B = 20 keeps this quick; the default leaf prior matches the generator
for method in ALL_METHODS:
    model = train_method(method, X, y, truth.schema, n_trees=20, d_max=5, leaf_prior=TRUE_PRIOR)
    print(f"{method:14s} test MSE {mse(y_test, model.predict(X_test)):.4f}")

# posterior weights concentrate on very few trees
model = train_method("mt_pos_pos", X, y, truth.schema, n_trees=20, d_max=5)
top = np.argsort(model.prediction_weights)[::-1][:3]
print("largest posterior weights", np.round(model.prediction_weights[top], 4), "trees", top)
