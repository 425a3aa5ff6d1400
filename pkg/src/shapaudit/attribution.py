"""Shapley-value attributions under interventional (background) semantics.

For a model f, an explained row x and background rows z_1..z_m, the coalition
value is v(S) = mean_j f(x_S, z_j,~S). Three routes compute the Shapley values
of v:

* :func:`exact_shapley` enumerates all 2^d coalitions (the oracle);
* :func:`kernel_shap` solves the Shapley-kernel weighted least squares problem
  over sampled coalitions, with the efficiency constraint eliminated exactly;
* :func:`tree_shap` walks leaf boxes of a :class:`~shapaudit.models.TreeEnsemble`
  and is exact on the margin scale.

All three satisfy ``phi0 + sum(phi) == fx`` to their method tolerance.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dataset import DataTable
from .errors import ConfigurationError, ShapAuditError, ShapeError, SolverError, TractabilityError
from .models import TreeEnsemble

EXACT_MAX_FEATURES = 15

TOLERANCE = {"exact": 1e-9, "tree": 1e-9, "kernel": 1e-6}


class AdditivityError(ShapAuditError, ArithmeticError):
    pass


# running record of every additivity check made by this module: (method, max error)
ADDITIVITY_LOG: list[tuple[str, float]] = []


@dataclass(frozen=True)
class AttributionVector:
    phi0: float
    phi: np.ndarray
    fx: float

    @property
    def additivity_error(self) -> float:
        return abs(self.phi0 + float(np.sum(self.phi)) - self.fx)


@dataclass(frozen=True)
class AttributionBatch:
    """Row-wise attributions: ``phi`` is (n, d), ``phi0`` and ``fx`` are (n,)."""

    phi0: np.ndarray
    phi: np.ndarray
    fx: np.ndarray
    row_ids: np.ndarray
    method: str = "unknown"
    feature_names: tuple = field(default=())

    def __len__(self):
        return self.phi.shape[0]

    def __getitem__(self, i) -> AttributionVector:
        return AttributionVector(float(self.phi0[i]), self.phi[i].copy(), float(self.fx[i]))

    def take(self, idx) -> AttributionBatch:
        return AttributionBatch(self.phi0[idx], self.phi[idx], self.fx[idx], self.row_ids[idx],
                                self.method, self.feature_names)

    @property
    def additivity_errors(self) -> np.ndarray:
        return np.abs(self.phi0 + self.phi.sum(axis=1) - self.fx)

    @classmethod
    def stack(cls, vectors, row_ids=None, method="unknown", feature_names=()):
        vectors = list(vectors)
        n = len(vectors)
        return cls(
            phi0=np.array([v.phi0 for v in vectors], dtype=float),
            phi=np.vstack([v.phi for v in vectors]) if n else np.zeros((0, 0)),
            fx=np.array([v.fx for v in vectors], dtype=float),
            row_ids=np.arange(n) if row_ids is None else np.asarray(row_ids),
            method=method,
            feature_names=tuple(feature_names),
        )


def check_additivity(phi0, phi, fx, method: str) -> float:
    """Record and enforce local accuracy at the method's tolerance."""
    err = float(np.max(np.abs(np.atleast_1d(phi0) + np.atleast_2d(phi).sum(axis=1) - np.atleast_1d(fx))))
    ADDITIVITY_LOG.append((method, err))
    tol = TOLERANCE[method]
    if err > tol:
        raise AdditivityError(f"{method} attribution violates additivity: error {err:.3g} > {tol:g}")
    return err


def model_function(model, output: str = "proba"):
    """Turn a scorer into a batch function ``f(X) -> (n,)``."""
    if callable(model) and not hasattr(model, "predict_proba"):
        return model
    if output == "margin":
        return model.predict_margin
    if output == "proba":
        return model.predict_proba
    raise ConfigurationError(f"unknown model output {output!r}")


def _as_background(background, d=None) -> np.ndarray:
    B = background.X if isinstance(background, DataTable) else np.asarray(background, dtype=float)
    if B.ndim == 1:
        B = B[None, :]
    if B.shape[0] < 1:
        raise ShapeError("background needs at least one row")
    if d is not None and B.shape[1] != d:
        raise ShapeError(f"background has {B.shape[1]} features, expected {d}")
    return B


def sample_background(train: DataTable, size: int = 100, seed: int = 0) -> np.ndarray:
    """Background rows drawn without replacement from real (non-synthetic) training rows."""
    real = np.flatnonzero(train.row_ids >= 0)
    if real.size == 0:
        raise ShapeError("no real training rows to draw a background from")
    rng = np.random.default_rng(seed)
    if real.size <= size:
        pick = real
    else:
        pick = np.sort(rng.choice(real, size=size, replace=False))
    return train.X[pick].copy()


def _coalition_values(fn, x, B, masks) -> np.ndarray:
    """v(S) for each boolean row of ``masks``, averaging f over the background."""
    m, d = B.shape
    out = np.empty(masks.shape[0])
    chunk = max(1, 200_000 // max(1, m))
    for start in range(0, masks.shape[0], chunk):
        mk = masks[start:start + chunk]
        rows = np.where(mk[:, None, :], x[None, None, :], B[None, :, :]).reshape(-1, d)
        out[start:start + chunk] = np.asarray(fn(rows), dtype=float).reshape(mk.shape[0], m).mean(axis=1)
    return out


def _all_masks(d):
    codes = np.arange(2**d, dtype=np.int64)
    return ((codes[:, None] >> np.arange(d)) & 1).astype(bool), codes


def exact_shapley(model, x, background, output: str = "proba") -> AttributionVector:
    """Shapley values by enumerating every coalition (d <= 15)."""
    fn = model_function(model, output)
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    if d > EXACT_MAX_FEATURES:
        raise TractabilityError(f"exact enumeration needs d <= {EXACT_MAX_FEATURES} (got {d}); use kernel_shap")
    B = _as_background(background, d)
    masks, codes = _all_masks(d)
    v = _coalition_values(fn, x, B, masks)
    sizes = masks.sum(axis=1)
    # w(s) = s! (d-s-1)! / d!
    w = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])
    phi = np.zeros(d)
    for i in range(d):
        without = codes[(codes >> i) & 1 == 0]
        phi[i] = np.sum(w[sizes[without]] * (v[without | (1 << i)] - v[without]))
    fx = float(np.asarray(fn(x[None, :]), dtype=float)[0])
    phi0 = float(v[0])
    check_additivity(phi0, phi, fx, "exact")
    return AttributionVector(phi0, phi, fx)


# ---------------------------------------------------------------------------
# kernel method


def size_weights(d: int) -> np.ndarray:
    """Total Shapley-kernel mass of each coalition size s = 1..d-1 (index s)."""
    w = np.zeros(d)
    for s in range(1, d):
        w[s] = (d - 1) / (s * (d - s))
    return w


def _sample_size_group(d, s, count, rng):
    total = math.comb(d, s)
    if count >= total:
        return _combinations(d, s)
    if total <= 20_000:
        pick = np.sort(rng.choice(total, size=count, replace=False))
        return _combinations(d, s)[pick]
    seen = set()
    out = []
    while len(out) < count:
        c = tuple(sorted(rng.choice(d, size=s, replace=False).tolist()))
        if c not in seen:
            seen.add(c)
            out.append(c)
    return np.array(out, dtype=np.int64)


@functools.lru_cache(maxsize=256)
def _combinations(d, s) -> np.ndarray:
    out = np.array(list(itertools.combinations(range(d), s)), dtype=np.int64)
    out.setflags(write=False)
    return out


def kernel_coalitions(d: int, n_coalitions: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Coalition masks and regression weights.

    Sizes whose share of the budget covers all their coalitions are enumerated
    with exact kernel weights; the remaining budget is split across the other
    sizes in proportion to their kernel mass, sampled without replacement within
    size, and each sampled coalition carries (size mass / number sampled).
    With a budget >= 2^d - 2 every proper coalition is enumerated.
    """
    mass = size_weights(d)
    sizes = list(range(1, d))
    counts = {s: math.comb(d, s) for s in sizes}
    budget = int(n_coalitions)
    full = []
    changed = True
    while changed and sizes:
        changed = False
        tot = sum(mass[s] for s in sizes)
        for s in list(sizes):
            if budget * mass[s] / tot >= counts[s]:
                full.append(s)
                sizes.remove(s)
                budget -= counts[s]
                changed = True
        if budget <= 0:
            break
    alloc = {}
    if sizes and budget > 0:
        tot = sum(mass[s] for s in sizes)
        raw = {s: budget * mass[s] / tot for s in sizes}
        alloc = {s: int(math.floor(raw[s])) for s in sizes}
        leftover = budget - sum(alloc.values())
        for s in sorted(sizes, key=lambda s: (-(raw[s] - alloc[s]), s))[:leftover]:
            alloc[s] += 1
        alloc = {s: min(c, counts[s]) for s, c in alloc.items()}
    masks = []
    weights = []
    for s in sorted(full):
        combos = _sample_size_group(d, s, counts[s], rng)
        mk = np.zeros((combos.shape[0], d), dtype=bool)
        np.put_along_axis(mk, combos, True, axis=1)
        masks.append(mk)
        weights.append(np.full(combos.shape[0], mass[s] / counts[s]))
    for s in sorted(alloc):
        c = alloc[s]
        if c == 0:
            continue
        combos = _sample_size_group(d, s, c, rng)
        mk = np.zeros((combos.shape[0], d), dtype=bool)
        np.put_along_axis(mk, combos, True, axis=1)
        masks.append(mk)
        weights.append(np.full(combos.shape[0], mass[s] / combos.shape[0]))
    if not masks:
        return np.zeros((0, d), dtype=bool), np.zeros(0)
    return np.vstack(masks), np.concatenate(weights)


def solve_kernel_wls(masks, weights, values, phi0, fx) -> np.ndarray:
    """Weighted least squares for phi with sum(phi) = fx - phi0 imposed by
    substituting phi_last = (fx - phi0) - sum(phi_rest)."""
    d = masks.shape[1]
    delta = fx - phi0
    if d == 1:
        return np.array([delta])
    Z = masks.astype(float)
    A = Z[:, :-1] - Z[:, -1:]
    t = (values - phi0) - Z[:, -1] * delta
    sw = np.sqrt(weights)
    sol, _, rank, _ = np.linalg.lstsq(A * sw[:, None], t * sw, rcond=None)
    if rank < d - 1:
        raise SolverError(f"kernel regression is rank deficient ({rank} < {d - 1}); sample more coalitions")
    return np.r_[sol, delta - sol.sum()]


KERNEL_REDRAWS = 10


def _design_rank(masks) -> int:
    Z = masks.astype(float)
    return int(np.linalg.matrix_rank(Z[:, :-1] - Z[:, -1:])) if Z.shape[1] > 1 else 0


def _identifiable_coalitions(d, n_coalitions, rng):
    """Coalitions whose constrained design has full rank d - 1.

    Small budgets (near d + 2) can draw a sample in which two features always
    enter together; such a draw is replaced by a fresh one from the same
    generator, at most ``KERNEL_REDRAWS`` times, so results stay seed-determined.
    """
    for _ in range(KERNEL_REDRAWS):
        masks, weights = kernel_coalitions(d, n_coalitions, rng)
        if d == 1 or _design_rank(masks) == d - 1:
            break
    return masks, weights


def row_rng(seed: int, row_id: int) -> np.random.Generator:
    """Per-row generator so results do not depend on which rows are explained together."""
    return np.random.default_rng([int(seed) % 2**63, int(row_id) % 2**63])


def kernel_shap(model, x, background, n_coalitions: int = 1000, seed: int = 0, output: str = "proba",
                rng=None, phi0=None) -> AttributionVector:
    """Kernel-weighted regression estimate of the Shapley values of one row.

    ``rng`` overrides ``seed``; ``phi0`` may be passed when the background mean
    output is already known.
    """
    fn = model_function(model, output)
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    if n_coalitions < d + 2:
        raise ConfigurationError(f"n_coalitions must be >= d + 2 = {d + 2}")
    B = _as_background(background, d)
    rng = np.random.default_rng(seed) if rng is None else rng
    masks, weights = _identifiable_coalitions(d, n_coalitions, rng)
    if phi0 is None:
        phi0 = float(np.mean(np.asarray(fn(B), dtype=float)))
    fx = float(np.asarray(fn(x[None, :]), dtype=float)[0])
    values = _coalition_values(fn, x, B, masks)
    phi = solve_kernel_wls(masks, weights, values, phi0, fx)
    check_additivity(phi0, phi, fx, "kernel")
    return AttributionVector(phi0, phi, fx)


def kernel_shap_batch(model, X, background, n_coalitions: int = 1000, seed: int = 0,
                      row_ids=None, output: str = "proba", feature_names=()) -> AttributionBatch:
    X = np.asarray(X, dtype=float)
    row_ids = np.arange(X.shape[0]) if row_ids is None else np.asarray(row_ids)
    B = _as_background(background, X.shape[1])
    phi0 = float(np.mean(np.asarray(model_function(model, output)(B), dtype=float)))
    vecs = [kernel_shap(model, x, B, n_coalitions, output=output, rng=row_rng(seed, r), phi0=phi0)
            for x, r in zip(X, row_ids)]
    return AttributionBatch.stack(vecs, row_ids=row_ids, method="kernel", feature_names=feature_names)


def exact_shapley_batch(model, X, background, row_ids=None, output: str = "proba",
                        feature_names=()) -> AttributionBatch:
    X = np.asarray(X, dtype=float)
    row_ids = np.arange(X.shape[0]) if row_ids is None else np.asarray(row_ids)
    vecs = [exact_shapley(model, x, background, output=output) for x in X]
    return AttributionBatch.stack(vecs, row_ids=row_ids, method="exact", feature_names=feature_names)


# ---------------------------------------------------------------------------
# tree method


def tree_shap_batch(ensemble: TreeEnsemble, X, background, row_ids=None, feature_names=()) -> AttributionBatch:
    """Exact interventional Shapley values of the ensemble margin."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    d = ensemble.n_features
    if X.shape[1] != d:
        raise ShapeError(f"ensemble expects {d} features, got {X.shape[1]}")
    B = np.ascontiguousarray(_as_background(background, d))
    n = X.shape[0]
    row_ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    if ensemble.trees:
        feat, lo, hi, length, val, max_len = ensemble.leaf_table
        weights = _kernels.shapley_weight_table(max_len)
        phi = _kernels.interventional_tree_shap(X, B, feat, lo, hi, length, val, weights, d)
    else:
        phi = np.zeros((n, d))
    phi0 = np.full(n, float(np.mean(ensemble.predict_margin(B))))
    fx = ensemble.predict_margin(X)
    check_additivity(phi0, phi, fx, "tree")
    return AttributionBatch(phi0, phi, fx, row_ids, "tree", tuple(feature_names))


def tree_shap(ensemble: TreeEnsemble, x, background) -> AttributionVector:
    return tree_shap_batch(ensemble, np.asarray(x, dtype=float)[None, :], background)[0]


# ---------------------------------------------------------------------------
# global importance


@dataclass(frozen=True)
class GlobalImportance:
    importance: np.ndarray
    ranking: np.ndarray
    feature_names: tuple = ()

    def top(self, k: int) -> np.ndarray:
        return self.ranking[:k]

    def ranks(self) -> np.ndarray:
        """Position of each feature in the ranking (0 = most important)."""
        r = np.empty_like(self.ranking)
        r[self.ranking] = np.arange(self.ranking.size)
        return r


def rank_descending(values) -> np.ndarray:
    """Indices sorted by descending value, ascending index on ties."""
    values = np.asarray(values, dtype=float)
    return np.lexsort((np.arange(values.size), -values))


def global_importance(attributions, feature_names=()) -> GlobalImportance:
    """Mean |phi| per feature across instances."""
    if isinstance(attributions, AttributionBatch):
        phi = attributions.phi
        feature_names = feature_names or attributions.feature_names
    elif isinstance(attributions, np.ndarray):
        phi = np.atleast_2d(attributions)
    else:
        vecs = list(attributions)
        if not vecs:
            raise ShapeError("need at least one attribution vector")
        widths = {np.asarray(v.phi).size for v in vecs}
        if len(widths) != 1:
            raise ShapeError(f"attribution vectors have mixed widths {sorted(widths)}")
        phi = np.vstack([np.asarray(v.phi, dtype=float) for v in vecs])
    if phi.shape[0] == 0:
        raise ShapeError("need at least one attribution vector")
    imp = np.mean(np.abs(phi), axis=0)
    return GlobalImportance(importance=imp, ranking=rank_descending(imp), feature_names=tuple(feature_names))
