"""Scorers: a trainable logistic model, a Newton-boosted tree ensemble, and an
adapter for score files produced elsewhere (deep models in particular).

Every scorer exposes ``predict_proba(X)``; the tree ensemble also exposes the
pre-sigmoid ``predict_margin(X)`` on which its attributions are exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd

from . import _kernels
from .dataset import DataTable
from .errors import AlignmentError, ConfigurationError, DivergenceError, ShapeError, ValidationError

log = logging.getLogger(__name__)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss(y, margin, sample_weight=None) -> float:
    """Weighted mean binary cross-entropy, computed from margins for stability."""
    y = np.asarray(y, dtype=float)
    margin = np.asarray(margin, dtype=float)
    # log(1 + exp(m)) - y*m
    per_row = np.logaddexp(0.0, margin) - y * margin
    w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    return float(np.sum(w * per_row) / np.sum(w))


def class_weights(y, positive_weight: float) -> np.ndarray:
    return np.where(np.asarray(y) == 1, float(positive_weight), 1.0)


def _check_two_classes(table: DataTable):
    if np.unique(table.y).size < 2:
        raise ConfigurationError("training needs both classes present")


def _check_width(X, n_features):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise ShapeError(f"scorer expects {n_features} features, got {X.shape[1]}")
    return X


# ---------------------------------------------------------------------------
# constant + logistic


@dataclass(frozen=True)
class ConstantScorer:
    probability: float
    n_features: int

    def predict_proba(self, X):
        X = _check_width(X, self.n_features)
        return np.full(X.shape[0], float(self.probability))


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def predict_margin(self, X):
        X = _check_width(X, self.n_features)
        return X @ self.weights + self.bias

    def predict_proba(self, X):
        return sigmoid(self.predict_margin(X))


@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 0.5
    epochs: int = 300
    l2: float = 1e-4
    class_weight: float = 1.0
    seed: int = 0


def logistic_objective(w, b, X, y, l2=0.0, positive_weight=1.0):
    """Class-weighted mean log-loss plus (l2/2)*||w||^2, with its gradient.

    Returns ``(loss, grad_w, grad_b)``.
    """
    sw = class_weights(y, positive_weight)
    margin = X @ w + b
    loss = log_loss(y, margin, sw) + 0.5 * l2 * float(w @ w)
    resid = sw * (sigmoid(margin) - y) / sw.sum()
    return loss, X.T @ resid + l2 * w, float(resid.sum())


def train_logistic(train: DataTable, config: LogisticConfig = LogisticConfig()) -> LogisticModel:
    """Full-batch gradient descent with step halving whenever a step would raise
    the training loss, so the per-epoch loss sequence never increases."""
    _check_two_classes(train)
    X, y = train.X, train.y.astype(float)
    # zero weights and the prior log-odds as bias; nothing is random, the seed
    # is kept for config symmetry
    w = np.zeros(X.shape[1])
    sw = class_weights(train.y, config.class_weight)
    prior = float(np.sum(sw * y) / np.sum(sw))
    b = float(np.log(prior / (1.0 - prior)))
    lr = float(config.learning_rate)
    loss, gw, gb = logistic_objective(w, b, X, y, config.l2, config.class_weight)
    for epoch in range(config.epochs):
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}", epoch=epoch)
        step = lr
        for _ in range(60):
            w_new = w - step * gw
            b_new = b - step * gb
            new_loss, ngw, ngb = logistic_objective(w_new, b_new, X, y, config.l2, config.class_weight)
            if not np.isfinite(new_loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch + 1}", epoch=epoch + 1)
            if new_loss <= loss:
                break
            step *= 0.5
        else:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, ngw, ngb
    return LogisticModel(weights=w, bias=float(b))


# ---------------------------------------------------------------------------
# tree ensemble


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def predict(self, X) -> np.ndarray:
        """Plain tree walk, independent of the compiled kernels."""
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        for i, x in enumerate(X):
            k = 0
            while self.feature[k] >= 0:
                k = self.left[k] if x[self.feature[k]] < self.threshold[k] else self.right[k]
            out[i] = self.value[k]
        return out

    def leaf_boxes(self):
        """For every leaf: value and {feature: [lo, hi)} constraints along its path."""
        out = []
        stack = [(0, {})]
        while stack:
            k, box = stack.pop()
            f = int(self.feature[k])
            if f < 0:
                out.append((float(self.value[k]), box))
                continue
            t = float(self.threshold[k])
            lo, hi = box.get(f, (-np.inf, np.inf))
            lbox = dict(box)
            lbox[f] = (lo, min(hi, t))
            rbox = dict(box)
            rbox[f] = (max(lo, t), hi)
            stack.append((int(self.right[k]), rbox))
            stack.append((int(self.left[k]), lbox))
        return out


@dataclass(frozen=True)
class TreeEnsemble:
    base_score: float
    trees: tuple
    learning_rate: float
    n_features: int
    train_loss: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        for t in self.trees:
            used = t.feature[t.feature >= 0]
            if used.size and used.max() >= self.n_features:
                raise ShapeError("tree uses a feature index beyond n_features")
            if not np.isfinite(t.threshold[t.feature >= 0]).all():
                raise ValidationError("tree thresholds must be finite")

    @cached_property
    def _packed(self):
        feats, thrs, lefts, rights, vals, roots = [], [], [], [], [], []
        offset = 0
        for t in self.trees:
            roots.append(offset)
            feats.append(t.feature)
            thrs.append(t.threshold)
            lefts.append(np.where(t.left >= 0, t.left + offset, -1))
            rights.append(np.where(t.right >= 0, t.right + offset, -1))
            vals.append(t.value)
            offset += t.n_nodes
        if not self.trees:
            z = np.zeros(0)
            zi = np.zeros(0, np.int64)
            return zi, z, zi, zi, z, zi
        return (
            np.concatenate(feats).astype(np.int64),
            np.concatenate(thrs).astype(float),
            np.concatenate(lefts).astype(np.int64),
            np.concatenate(rights).astype(np.int64),
            np.concatenate(vals).astype(float),
            np.asarray(roots, dtype=np.int64),
        )

    @cached_property
    def leaf_table(self):
        """Padded per-leaf boxes for the attribution kernel."""
        leaves = [lb for t in self.trees for lb in t.leaf_boxes()]
        max_len = max([len(b) for _, b in leaves] + [1])
        L = len(leaves)
        feat = np.zeros((L, max_len), np.int64)
        lo = np.zeros((L, max_len))
        hi = np.zeros((L, max_len))
        length = np.zeros(L, np.int64)
        val = np.zeros(L)
        for l, (v, box) in enumerate(leaves):
            val[l] = v
            length[l] = len(box)
            for q, f in enumerate(sorted(box)):
                feat[l, q] = f
                lo[l, q], hi[l, q] = box[f]
        return feat, lo, hi, length, val, max_len

    def predict_margin(self, X):
        X = np.ascontiguousarray(_check_width(X, self.n_features))
        if not self.trees:
            return np.full(X.shape[0], self.base_score)
        return self.base_score + _kernels.predict_packed(X, *self._packed)

    def predict_proba(self, X):
        return sigmoid(self.predict_margin(X))


@dataclass(frozen=True)
class GBDTConfig:
    n_trees: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_leaf: int = 1
    class_weight: float = 1.0
    reg_lambda: float = 1.0
    seed: int = 0


def train_gbdt(train: DataTable, config: GBDTConfig = GBDTConfig()) -> TreeEnsemble:
    """Gradient boosting on logistic loss with second-order leaves.

    Each tree is grown exact-greedy on midpoints between sorted unique values.
    If adding a tree would raise the training loss its leaf values are halved
    until it does not (and the tree is dropped after 20 halvings).
    """
    if config.max_depth < 1 or config.n_trees < 0:
        raise ConfigurationError("max_depth must be >= 1 and n_trees >= 0")
    if config.min_leaf < 1:
        raise ConfigurationError("min_leaf must be >= 1")
    _check_two_classes(train)
    X = np.ascontiguousarray(train.X)
    y = train.y.astype(float)
    sw = class_weights(y, config.class_weight)
    p0 = float(np.sum(sw * y) / np.sum(sw))
    base = float(np.log(p0 / (1.0 - p0)))
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
    margin = np.full(X.shape[0], base)
    loss = log_loss(y, margin, sw)
    losses = [loss]
    trees = []
    for _ in range(config.n_trees):
        p = sigmoid(margin)
        g = sw * (p - y)
        h = sw * p * (1.0 - p)
        feat, thr, left, right, val = _kernels.grow_tree(
            X, order, g, h, config.max_depth, config.min_leaf, config.reg_lambda
        )
        val = val * config.learning_rate
        tree = Tree(feat.copy(), thr.copy(), left.copy(), right.copy(), val)
        step = tree.predict(X) if X.shape[0] < 64 else _kernels.predict_packed(
            X, feat, thr, left, right, val, np.zeros(1, np.int64))
        for _ in range(20):
            new_loss = log_loss(y, margin + step, sw)
            if new_loss <= loss:
                break
            val = val * 0.5
            step = step * 0.5
        else:
            log.info("boosting stopped: no loss-reducing tree after %d trees", len(trees))
            break
        tree = Tree(feat.copy(), thr.copy(), left.copy(), right.copy(), val)
        trees.append(tree)
        margin = margin + step
        loss = new_loss
        losses.append(loss)
    return TreeEnsemble(base_score=base, trees=tuple(trees), learning_rate=config.learning_rate,
                        n_features=X.shape[1], train_loss=tuple(losses))


# ---------------------------------------------------------------------------
# externally produced scores


@dataclass(frozen=True)
class ExternalScores:
    """Row-aligned probabilities (and optionally attributions) from a file.

    Row ``i`` of the file belongs to source row ``row_id == i`` of the table it
    was declared against.
    """

    scores: np.ndarray
    phi0: np.ndarray | None = None
    phi: np.ndarray | None = None
    feature_names: tuple | None = None

    def lookup(self, row_ids):
        row_ids = np.asarray(row_ids, dtype=np.int64)
        if row_ids.size and (row_ids.min() < 0 or row_ids.max() >= self.scores.shape[0]):
            raise AlignmentError("table rows are not covered by the external score file "
                                 "(synthetic or out-of-range row ids)")
        return row_ids

    def scores_for(self, table: DataTable) -> np.ndarray:
        return self.scores[self.lookup(table.row_ids)]

    @property
    def has_attributions(self) -> bool:
        return self.phi is not None


def load_external_scores(path, expected_rows: int, feature_names=None) -> ExternalScores:
    """Read ``score[,phi0,phi_<feature>...]`` CSV, validating count, range and width."""
    df = pd.read_csv(path)
    if "score" not in df.columns:
        raise ValidationError(f"{path}: missing 'score' column")
    if len(df) != expected_rows:
        raise AlignmentError(f"{path}: {len(df)} rows but the table has {expected_rows}")
    scores = pd.to_numeric(df["score"], errors="coerce").to_numpy(dtype=float)
    bad = ~((scores >= 0.0) & (scores <= 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"{path}: score {df['score'].iloc[i]!r} at row {i + 1} outside [0, 1]", row=i + 1)
    phi_cols = [c for c in df.columns if c.startswith("phi_")]
    if not phi_cols:
        return ExternalScores(scores=scores)
    names = tuple(c[len("phi_"):] for c in phi_cols)
    if feature_names is not None and len(names) != len(feature_names):
        raise ShapeError(f"{path}: {len(names)} attribution columns for {len(feature_names)} features")
    if feature_names is not None and tuple(feature_names) != names:
        raise ShapeError(f"{path}: attribution columns do not match the table's feature names")
    phi = df[phi_cols].to_numpy(dtype=float)
    phi0 = df["phi0"].to_numpy(dtype=float) if "phi0" in df.columns else np.zeros(len(df))
    if not (np.isfinite(phi).all() and np.isfinite(phi0).all()):
        raise ValidationError(f"{path}: non-finite attribution values")
    return ExternalScores(scores=scores, phi0=phi0, phi=phi, feature_names=names)


def score_batch(scorer, table: DataTable) -> np.ndarray:
    """Probabilities for every row of ``table``."""
    if isinstance(scorer, ExternalScores):
        return scorer.scores_for(table)
    p = np.asarray(scorer.predict_proba(table.X), dtype=float)
    if p.shape != (len(table),):
        raise ShapeError("scorer returned the wrong number of scores")
    return p
