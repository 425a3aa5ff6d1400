"""Explanation-quality battery: faithfulness, stability and cross-explainer agreement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attribution import AttributionBatch, GlobalImportance, global_importance, rank_descending
from .dataset import DataTable
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    DependencyError,
    InsufficientDataError,
    ResampleError,
    ShapeError,
)
from .models import ExternalScores
from .stats import kendall_w, midrank, roc_auc, spearman

MASK_STRATEGIES = ("mean", "resample")


# ---------------------------------------------------------------------------
# faithfulness


def mask_features(X, masked, background, strategy: str = "mean", seed: int = 0) -> np.ndarray:
    """Replace the ``masked`` entries of X with background information.

    ``masked`` is either a feature index array (same features for every row) or a
    boolean (n, d) matrix. ``mean`` imputes the background column means;
    ``resample`` copies the masked entries from one random background row per
    eval row.
    """
    if strategy not in MASK_STRATEGIES:
        raise ConfigurationError(f"unknown masking strategy {strategy!r}; use one of {MASK_STRATEGIES}")
    X = np.array(X, dtype=float, copy=True)
    B = np.atleast_2d(np.asarray(background, dtype=float))
    masked = np.asarray(masked)
    if masked.dtype == bool and masked.ndim == 2:
        mask = masked
    else:
        mask = np.zeros(X.shape, dtype=bool)
        mask[:, masked.astype(np.int64)] = True
    if strategy == "mean":
        fill = np.broadcast_to(B.mean(axis=0), X.shape)
    else:
        rng = np.random.default_rng(seed)
        fill = B[rng.integers(0, B.shape[0], size=X.shape[0])]
    X[mask] = fill[mask]
    return X


def _predict(scorer, X):
    if isinstance(scorer, ExternalScores):
        raise DependencyError("faithfulness needs a scorer that can re-score masked inputs, "
                              "not a fixed external score file")
    return np.asarray(scorer.predict_proba(X), dtype=float)


def _topk_mask(d, n, k, ranking=None, per_instance_phi=None):
    """Boolean (n, d) matrix selecting each row's top-k features."""
    mask = np.zeros((n, d), dtype=bool)
    if k == 0:
        return mask
    if per_instance_phi is not None:
        phi = np.abs(np.asarray(per_instance_phi, dtype=float))
        if phi.shape != (n, d):
            raise ShapeError("per-instance attributions must be (rows, features)")
        for i in range(n):
            mask[i, rank_descending(phi[i])[:k]] = True
    else:
        mask[:, np.asarray(ranking.ranking)[:k]] = True
    return mask


def _check_k(k, d, allow_zero):
    if k < 0 or (k == 0 and not allow_zero):
        raise ConfigurationError(f"k must be positive, got {k}")
    if k > d:
        raise ConfigurationError(f"k={k} exceeds the {d} available features")


def _auc_keeping(scorer, table, labels, k, ranking, background, strategy, seed, per_instance_phi):
    d = table.n_features
    keep = _topk_mask(d, len(table), k, ranking, per_instance_phi)
    if keep.all():
        return roc_auc(_predict(scorer, table.X), labels)
    return roc_auc(_predict(scorer, mask_features(table.X, ~keep, background, strategy, seed)), labels)


def sufficiency(scorer, eval_table: DataTable, ranking: GlobalImportance, k: int, background,
                labels=None, strategy: str = "mean", seed: int = 0, per_instance_phi=None) -> float:
    """ROC-AUC when every feature outside the top-k is masked."""
    _check_k(k, eval_table.n_features, allow_zero=False)
    labels = eval_table.y if labels is None else labels
    return _auc_keeping(scorer, eval_table, labels, k, ranking, background, strategy, seed, per_instance_phi)


def comprehensiveness(scorer, eval_table: DataTable, ranking: GlobalImportance, k: int, background,
                      labels=None, strategy: str = "mean", seed: int = 0, per_instance_phi=None) -> float:
    """Full-model ROC-AUC minus the ROC-AUC with the top-k features masked."""
    _check_k(k, eval_table.n_features, allow_zero=True)
    labels = eval_table.y if labels is None else labels
    if k == 0:
        return 0.0
    full = roc_auc(_predict(scorer, eval_table.X), labels)
    drop = _topk_mask(eval_table.n_features, len(eval_table), k, ranking, per_instance_phi)
    masked = roc_auc(_predict(scorer, mask_features(eval_table.X, drop, background, strategy, seed)), labels)
    return full - masked


@dataclass(frozen=True)
class FaithfulnessRow:
    k: int
    sufficiency_auc: float
    comprehensiveness_drop: float
    full_auc: float
    masked_baseline_auc: float


@dataclass(frozen=True)
class FaithfulnessReport:
    rows: tuple
    strategy: str = "mean"
    per_instance: bool = False

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "per_instance": self.per_instance,
            "by_k": [vars(r) for r in self.rows],
        }


def faithfulness_report(scorer, eval_table: DataTable, ranking: GlobalImportance, background,
                        ks=(5, 10, 15), strategy: str = "mean", seed: int = 0,
                        per_instance_phi=None) -> FaithfulnessReport:
    labels = eval_table.y
    full = roc_auc(_predict(scorer, eval_table.X), labels)
    baseline = _auc_keeping(scorer, eval_table, labels, 0, ranking, background, strategy, seed, None)
    rows = []
    for k in ks:
        k = min(int(k), eval_table.n_features)
        rows.append(FaithfulnessRow(
            k=k,
            sufficiency_auc=sufficiency(scorer, eval_table, ranking, k, background, labels, strategy, seed,
                                        per_instance_phi),
            comprehensiveness_drop=comprehensiveness(scorer, eval_table, ranking, k, background, labels,
                                                     strategy, seed, per_instance_phi),
            full_auc=full,
            masked_baseline_auc=baseline,
        ))
    return FaithfulnessReport(rows=tuple(rows), strategy=strategy, per_instance=per_instance_phi is not None)


# ---------------------------------------------------------------------------
# stability


def stability_band(w: float) -> str:
    if w > 0.7:
        return "high"
    if w >= 0.5:
        return "moderate"
    return "low"


@dataclass(frozen=True)
class StabilityReport:
    kendall_w: float
    n_subsamples: int
    subsample_size: int
    rankings: np.ndarray
    importances: np.ndarray
    stability_band: str
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "kendall_w": self.kendall_w,
            "stability_band": self.stability_band,
            "n_subsamples": self.n_subsamples,
            "subsample_size": self.subsample_size,
            "seed": self.seed,
            "rankings": self.rankings.tolist(),
        }


def _phi_of(result):
    return result.phi if isinstance(result, AttributionBatch) else np.atleast_2d(np.asarray(result, dtype=float))


def stability_kendall_w(explain_fn, pool: DataTable, n_subsamples: int = 30, subsample_size: int = 200,
                        seed: int = 0) -> StabilityReport:
    """Kendall's W across global-importance rankings of bootstrap subsamples.

    ``explain_fn(table)`` returns attributions for every row of ``table`` (an
    :class:`AttributionBatch` or an (n, d) array). Each pool row is explained at
    most once and reused when it is redrawn.
    """
    if len(pool) < subsample_size:
        raise ConfigurationError(f"pool has {len(pool)} rows, fewer than subsample_size={subsample_size}")
    if n_subsamples < 2:
        raise ConfigurationError("need at least 2 subsamples")
    rng = np.random.default_rng(seed)
    draws = [rng.integers(0, len(pool), size=subsample_size) for _ in range(n_subsamples)]
    d = pool.n_features
    cache = np.full((len(pool), d), np.nan)
    done = np.zeros(len(pool), dtype=bool)
    importances = np.empty((n_subsamples, d))
    for s, idx in enumerate(draws):
        new = np.unique(idx[~done[idx]])
        if new.size:
            try:
                phi = _phi_of(explain_fn(pool.take(new)))
            except Exception as exc:
                raise ResampleError(f"explainer failed on stability subsample {s}: {exc}", index=s) from exc
            if phi.shape != (new.size, d):
                raise ShapeError(f"explainer returned shape {phi.shape} for subsample {s}")
            cache[new] = phi
            done[new] = True
        importances[s] = global_importance(cache[idx]).importance
    # rank 1 = most important, average ranks on ties
    rankings = np.vstack([midrank(-imp) for imp in importances])
    w = kendall_w(rankings)
    return StabilityReport(kendall_w=w, n_subsamples=n_subsamples, subsample_size=subsample_size,
                           rankings=rankings, importances=importances, stability_band=stability_band(w),
                           seed=seed)


# ---------------------------------------------------------------------------
# agreement


@dataclass(frozen=True)
class AgreementReport:
    spearman_rho: float
    ci_low: float
    ci_high: float
    p_value: float
    top_n: int
    features: np.ndarray
    n_boot: int
    bootstrap_unit: str
    labels: tuple = field(default=("a", "b"))

    def to_dict(self) -> dict:
        return {
            "pair": list(self.labels),
            "spearman_rho": self.spearman_rho,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "p_value_str": f"{self.p_value:.4f}",
            "top_n": self.top_n,
            "n_features_union": int(self.features.size),
            "n_boot": self.n_boot,
            "bootstrap_unit": self.bootstrap_unit,
        }


def cross_explainer_agreement(importance_a: GlobalImportance, importance_b: GlobalImportance, top_n: int = 30,
                              n_boot: int = 1000, seed: int = 0, phi_a=None, phi_b=None,
                              labels=("a", "b")) -> AgreementReport:
    """Spearman rho of two importance vectors over the union of their top-n features.

    The 95% percentile interval resamples instances (recomputing both importance
    vectors) when row-aligned attributions ``phi_a``/``phi_b`` are given, and
    resamples the union's features otherwise. Degenerate replicates (one side
    constant) are skipped.
    """
    ia = np.asarray(importance_a.importance, dtype=float)
    ib = np.asarray(importance_b.importance, dtype=float)
    if ia.shape != ib.shape:
        raise ShapeError("importances cover different feature sets")
    union = np.union1d(importance_a.ranking[:top_n], importance_b.ranking[:top_n])
    if union.size < 3:
        raise InsufficientDataError(f"top-{top_n} union has {union.size} features; need at least 3")
    rho, p = spearman(ia[union], ib[union])
    rng = np.random.default_rng(seed)
    reps = np.full(n_boot, np.nan)
    if phi_a is not None and phi_b is not None:
        pa = np.abs(np.asarray(phi_a, dtype=float))[:, union]
        pb = np.abs(np.asarray(phi_b, dtype=float))[:, union]
        if pa.shape != pb.shape:
            raise ShapeError("instance attributions are not row-aligned")
        unit = "instances"
        n = pa.shape[0]
        for r in range(n_boot):
            idx = rng.integers(0, n, size=n)
            try:
                reps[r] = spearman(pa[idx].mean(axis=0), pb[idx].mean(axis=0))[0]
            except DegenerateInputError:
                pass
    else:
        unit = "features"
        xa, xb = ia[union], ib[union]
        for r in range(n_boot):
            idx = rng.integers(0, union.size, size=union.size)
            try:
                reps[r] = spearman(xa[idx], xb[idx])[0]
            except DegenerateInputError:
                pass
    reps = reps[np.isfinite(reps)]
    if reps.size == 0:
        lo = hi = rho
    else:
        lo, hi = (float(v) for v in np.quantile(reps, [0.025, 0.975]))
    return AgreementReport(spearman_rho=rho, ci_low=lo, ci_high=hi, p_value=p, top_n=top_n, features=union,
                           n_boot=n_boot, bootstrap_unit=unit, labels=tuple(labels))
