"""Shared builders for the test suite."""

import numpy as np

from shapaudit.models import Tree, TreeEnsemble

# values drawn from a small grid so rows land exactly on split points
GRID = np.array([0.0, 1.0, 2.0, 3.0])
CUTS = np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0])


def random_tree(rng, d, max_depth):
    feature, threshold, left, right, value = [], [], [], [], []

    def node(depth):
        k = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        if depth < max_depth and rng.random() < 0.8:
            feature[k] = int(rng.integers(d))
            threshold[k] = float(rng.choice(CUTS))
            left[k] = node(depth + 1)
            right[k] = node(depth + 1)
        else:
            value[k] = float(rng.normal())
        return k

    node(0)
    return Tree(np.array(feature, np.int64), np.array(threshold), np.array(left, np.int64),
                np.array(right, np.int64), np.array(value))


def random_ensemble(rng, d, n_trees=None, max_depth=None):
    n_trees = int(rng.integers(1, 6)) if n_trees is None else n_trees
    max_depth = int(rng.integers(1, 5)) if max_depth is None else max_depth
    trees = tuple(random_tree(rng, d, max_depth) for _ in range(n_trees))
    return TreeEnsemble(base_score=float(rng.normal()), trees=trees, learning_rate=1.0, n_features=d)


def grid_rows(rng, n, d):
    return rng.choice(GRID, size=(n, d))


def brute_force_shapley(fn, x, B):
    """Permutation-free subset formula written out directly, for tiny d."""
    from itertools import combinations
    from math import factorial

    d = x.size

    def v(S):
        Z = B.copy()
        Z[:, list(S)] = x[list(S)]
        return float(np.mean(fn(Z)))

    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for s in range(d):
            for S in combinations(others, s):
                w = factorial(s) * factorial(d - s - 1) / factorial(d)
                phi[i] += w * (v(S + (i,)) - v(S))
    return phi
