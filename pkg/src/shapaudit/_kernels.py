"""Compiled inner loops for tree growth, tree prediction and tree attribution.

Trees are stored as flat node arrays: ``feature`` (-1 at leaves), ``threshold``,
``left``, ``right`` (-1 at leaves) and ``value``. A row goes left when
``x[feature] < threshold``.
"""

import numba
import numpy as np
from numba import njit, prange

# workqueue is always available; the TBB layer shipped here is too old
numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True)
def grow_tree(X, order, g, h, max_depth, min_leaf, lam):
    """Exact-greedy Newton tree. Leaf values are the raw -G/(H+lam) steps."""
    n, d = X.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    G = np.zeros(cap)
    H = np.zeros(cap)
    C = np.zeros(cap, np.int64)
    node_of = np.zeros(n, np.int64)
    n_nodes = 1
    level_start = 0
    level_end = 1
    for depth in range(max_depth + 1):
        for i in range(n):
            k = node_of[i]
            if k >= 0:
                G[k] += g[i]
                H[k] += h[i]
                C[k] += 1
        if depth == max_depth:
            for k in range(level_start, level_end):
                value[k] = -G[k] / (H[k] + lam)
            break
        best_gain = np.zeros(cap)
        best_f = np.full(cap, -1, np.int64)
        best_t = np.zeros(cap)
        GL = np.zeros(cap)
        HL = np.zeros(cap)
        CL = np.zeros(cap, np.int64)
        last = np.zeros(cap)
        for f in range(d):
            for k in range(level_start, level_end):
                GL[k] = 0.0
                HL[k] = 0.0
                CL[k] = 0
            for idx in range(n):
                r = order[idx, f]
                k = node_of[r]
                if k < 0:
                    continue
                xv = X[r, f]
                if CL[k] > 0 and xv > last[k]:
                    cr = C[k] - CL[k]
                    if CL[k] >= min_leaf and cr >= min_leaf:
                        gr = G[k] - GL[k]
                        hr = H[k] - HL[k]
                        gain = (GL[k] * GL[k] / (HL[k] + lam) + gr * gr / (hr + lam)
                                - G[k] * G[k] / (H[k] + lam))
                        if gain > best_gain[k]:
                            best_gain[k] = gain
                            best_f[k] = f
                            t = 0.5 * (last[k] + xv)
                            if t <= last[k]:
                                t = xv
                            best_t[k] = t
                GL[k] += g[r]
                HL[k] += h[r]
                CL[k] += 1
                last[k] = xv
        new_start = n_nodes
        for k in range(level_start, level_end):
            if best_f[k] >= 0:
                feature[k] = best_f[k]
                threshold[k] = best_t[k]
                left[k] = n_nodes
                right[k] = n_nodes + 1
                n_nodes += 2
            else:
                value[k] = -G[k] / (H[k] + lam)
        for i in range(n):
            k = node_of[i]
            if k < 0:
                continue
            f = feature[k]
            if f < 0:
                node_of[i] = -1
            elif X[i, f] < threshold[k]:
                node_of[i] = left[k]
            else:
                node_of[i] = right[k]
        level_start = new_start
        level_end = n_nodes
        if level_start == level_end:
            break
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True, parallel=True)
def predict_packed(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    for i in prange(n):
        s = 0.0
        for t in range(roots.shape[0]):
            k = roots[t]
            while feature[k] >= 0:
                if X[i, feature[k]] < threshold[k]:
                    k = left[k]
                else:
                    k = right[k]
            s += value[k]
        out[i] = s
    return out


@njit(cache=True, parallel=True)
def interventional_tree_shap(X, B, leaf_feat, leaf_lo, leaf_hi, leaf_len, leaf_val, weights, n_features):
    """Shapley values of v(S) = mean_z sum_leaves val * [ (x_S, z_~S) reaches leaf ].

    Each leaf is a box: a list of distinct features with half-open intervals
    [lo, hi). For one (x, z) pair a leaf is reachable from a coalition S iff every
    box feature is satisfied by whichever of x or z supplies it. Features
    satisfied by x only must be in S (set A), by z only must be absent (set B),
    by both are free. The game 1[A in S, B disjoint S] has Shapley values
    (|A|-1)!|B|!/(|A|+|B|)! for members of A and minus |A|!(|B|-1)!/(|A|+|B|)!
    for members of B; ``weights[a, b]`` holds (a-1)! b! / (a+b)!.
    """
    n = X.shape[0]
    m = B.shape[0]
    n_leaves = leaf_len.shape[0]
    max_len = leaf_feat.shape[1]
    phi = np.zeros((n, n_features))
    for i in prange(n):
        in_a = np.empty(max_len, np.int64)
        in_b = np.empty(max_len, np.int64)
        acc = np.zeros(n_features)
        for j in range(m):
            for l in range(n_leaves):
                a = 0
                b = 0
                reachable = True
                for q in range(leaf_len[l]):
                    f = leaf_feat[l, q]
                    lo = leaf_lo[l, q]
                    hi = leaf_hi[l, q]
                    xo = X[i, f] >= lo and X[i, f] < hi
                    zo = B[j, f] >= lo and B[j, f] < hi
                    if xo:
                        if not zo:
                            in_a[a] = f
                            a += 1
                    elif zo:
                        in_b[b] = f
                        b += 1
                    else:
                        reachable = False
                        break
                if not reachable or a + b == 0:
                    continue
                v = leaf_val[l]
                if a > 0:
                    wa = v * weights[a, b]
                    for q in range(a):
                        acc[in_a[q]] += wa
                if b > 0:
                    wb = v * weights[b, a]
                    for q in range(b):
                        acc[in_b[q]] -= wb
        for f in range(n_features):
            phi[i, f] = acc[f] / m
    return phi


def shapley_weight_table(max_len):
    """weights[a, b] = (a-1)! b! / (a+b)! for a >= 1."""
    from math import factorial

    w = np.zeros((max_len + 1, max_len + 1))
    for a in range(1, max_len + 1):
        for b in range(0, max_len + 1):
            w[a, b] = factorial(a - 1) * factorial(b) / factorial(a + b)
    return w


def set_threads(n):
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
