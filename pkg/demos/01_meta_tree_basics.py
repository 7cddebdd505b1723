"""
A single meta-tree, by hand
===========================

Build a depth-2 representative tree, condition it on data and look at what
the posterior says about which of its subtrees explains the data.
"""

import numpy as np

from metaboost import MetaTree, MetaTreeNode, NormalGammaParams, Split
from metaboost.metatree import FeatureSchema

rng = np.random.default_rng(0)

# two continuous features followed by one binary feature
schema = FeatureSchema(n_continuous=2, n_binary=1)


def internal(split, depth, left, right, g=0.6):
    return MetaTreeNode(split=split, g_prior=g, g_post=g, depth=depth, left=left, right=right)


def make_tree():
    # root splits x0 at 0; the left child splits on the binary feature, the right on x1
    root = internal(Split(0, 0.0), 0,
                    internal(Split(2), 1, MetaTreeNode(depth=2), MetaTreeNode(depth=2)),
                    internal(Split(1, 0.5), 1, MetaTreeNode(depth=2), MetaTreeNode(depth=2)))
    return MetaTree(root, schema, NormalGammaParams(0.0, 2.0, 2.0, 2.0))


tree = make_tree()

# data where only the root split matters
X = np.column_stack([rng.normal(size=400), rng.normal(size=400), rng.integers(0, 2, 400)])
y = np.where(X[:, 0] <= 0, -1.0, 1.0) + rng.normal(0, 0.5, 400)
tree.fit(X, y)

# the root is almost surely internal; its children are almost surely leaves
for node in tree.nodes:
    if not node.is_leaf:
        print(f"depth {node.depth} split {node.split}: g {node.g_prior} -> {node.g_post:.4f}")

# a prediction mixes the node means along the path of x
x = np.array([-0.3, 2.0, 1.0])
path, weights = tree.path_weights(x)
for node, w in zip(path, weights):
    print(f"  depth {node.depth}: weight {w:.4f}, node mean {tree.node_posterior(node).m:+.4f}")
print("prediction", tree.predict(x))
print("log marginal likelihood", tree.log_marginal_likelihood)

# sequential conditioning gives the same posterior as the batch fit
seq = make_tree().fit(X, y, sequential=True)
print("batch vs sequential log ML:", tree.log_marginal_likelihood, seq.log_marginal_likelihood)
