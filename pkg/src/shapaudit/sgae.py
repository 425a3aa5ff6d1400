"""SHAP-guided adaptive ensemble.

Two scorers L and X are blended per transaction. The blend weight on L depends
on how well the two attribution vectors agree (Spearman correlation over the
transaction's top-K features):

    A >= 0:  w = clip(0.5 + 0.2 * tanh(A / sigma_A), w_min, w_max)
    A <  0:  w = tau_a

and the score is w * f_L + (1 - w) * f_X. ``sigma_A`` is the spread of A on a
calibration partition that must be disjoint from the evaluation rows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .attribution import AttributionBatch, rank_descending
from .dataset import DataTable
from .errors import CalibrationError, ConfigurationError, ShapeError
from .models import score_batch
from .stats import bootstrap_ci, delong_test, mcnemar_test, metric_report, optimal_threshold, roc_auc

TOPK_MODES = ("per_transaction", "global")


@dataclass(frozen=True)
class SgaeConfig:
    K: int = 10
    tau_a: float = 0.60
    w_min: float = 0.30
    w_max: float = 0.70
    epsilon: float = 1e-6
    topk_mode: str = "per_transaction"

    def __post_init__(self):
        if self.K < 2:
            raise ConfigurationError("K must be at least 2")
        if not self.w_min <= 0.5 <= self.w_max:
            raise ConfigurationError("need w_min <= 0.5 <= w_max")
        if not self.w_min <= self.tau_a <= self.w_max:
            raise ConfigurationError("tau_a must lie in [w_min, w_max]")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.topk_mode not in TOPK_MODES:
            raise ConfigurationError(f"topk_mode must be one of {TOPK_MODES}")


@dataclass(frozen=True)
class SgaeCalibration:
    sigma_A: float
    n: int
    mean_A: float = 0.0


def _phi(x):
    return x.phi if isinstance(x, AttributionBatch) else np.asarray(getattr(x, "phi", x), dtype=float)


def topk_features(phi_l, phi_x, K: int) -> np.ndarray:
    """Indices of the K largest |phi_l| + |phi_x| (per row), ties to the lower index."""
    a = _phi(phi_l)
    b = _phi(phi_x)
    if a.shape != b.shape:
        raise ShapeError(f"attribution widths differ: {a.shape} vs {b.shape}")
    d = a.shape[-1]
    if not 1 <= K <= d:
        raise ConfigurationError(f"K={K} must lie in [1, {d}]")
    score = np.abs(a) + np.abs(b)
    if score.ndim == 1:
        return rank_descending(score)[:K]
    return np.vstack([rank_descending(row)[:K] for row in score])


def agreement(phi_l, phi_x, top) -> np.ndarray | float:
    """Spearman correlation of the signed attributions restricted to ``top``.

    A side that is constant on ``top`` gives A = 0.
    """
    a = _phi(phi_l)
    b = _phi(phi_x)
    top = np.asarray(top)
    single = a.ndim == 1
    a2, b2 = np.atleast_2d(a), np.atleast_2d(b)
    t2 = np.broadcast_to(np.atleast_2d(top), (a2.shape[0], top.shape[-1]))
    if t2.shape[1] < 2:
        raise ConfigurationError("agreement needs at least 2 features")
    ra = rankdata(np.take_along_axis(a2, t2, axis=1), axis=1)
    rb = rankdata(np.take_along_axis(b2, t2, axis=1), axis=1)
    ra -= ra.mean(axis=1, keepdims=True)
    rb -= rb.mean(axis=1, keepdims=True)
    num = np.sum(ra * rb, axis=1)
    den = np.sqrt(np.sum(ra * ra, axis=1) * np.sum(rb * rb, axis=1))
    A = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    A = np.clip(A, -1.0, 1.0)
    return float(A[0]) if single else A


def calibrate(agreements, epsilon: float = 1e-6) -> SgaeCalibration:
    """Population standard deviation of calibration-set agreements, floored at epsilon."""
    A = np.asarray(agreements, dtype=float).ravel()
    if A.size < 2:
        raise CalibrationError("calibration needs at least 2 agreement scores")
    return SgaeCalibration(sigma_A=max(float(np.std(A)), epsilon), n=A.size, mean_A=float(A.mean()))


def adaptive_weight(A, calibration: SgaeCalibration, config: SgaeConfig = SgaeConfig()):
    A = np.asarray(A, dtype=float)
    convergent = 0.5 + 0.2 * np.tanh(A / calibration.sigma_A)
    w = np.where(A >= 0, convergent, config.tau_a)
    w = np.clip(w, config.w_min, config.w_max)
    return float(w) if w.ndim == 0 else w


def sgae_score(f_l, f_x, w):
    """Convex blend w * f_l + (1 - w) * f_x, kept inside [min, max] of the inputs."""
    f_l = np.asarray(f_l, dtype=float)
    f_x = np.asarray(f_x, dtype=float)
    p = f_x + np.asarray(w, dtype=float) * (f_l - f_x)
    p = np.clip(p, np.minimum(f_l, f_x), np.maximum(f_l, f_x))
    return float(p) if p.ndim == 0 else p


def static_ensemble(f_l, f_x):
    """Equal-weight blend; the adaptive rule's value at zero agreement."""
    return sgae_score(f_l, f_x, 0.5)


@dataclass
class SgaeReport:
    row_ids: np.ndarray
    f_l: np.ndarray
    f_x: np.ndarray
    A: np.ndarray
    w: np.ndarray
    p: np.ndarray
    p_static: np.ndarray
    calibration: SgaeCalibration
    config: SgaeConfig
    summary: dict = field(default_factory=dict)

    @property
    def branch(self) -> np.ndarray:
        return np.where(self.A < 0, "divergent", "convergent")

    def rows(self):
        br = self.branch
        for i in range(self.row_ids.size):
            yield (int(self.row_ids[i]), float(self.f_l[i]), float(self.f_x[i]), float(self.A[i]), str(br[i]),
                   float(self.w[i]), float(self.p[i]))

    def summary_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "calibration": asdict(self.calibration),
            "n_rows": int(self.row_ids.size),
            "n_divergent": int(np.sum(self.A < 0)),
            "mean_A": float(np.mean(self.A)) if self.A.size else 0.0,
            "mean_w": float(np.mean(self.w)) if self.w.size else 0.0,
            **self.summary,
        }


def decide(phi_l, phi_x, f_l, f_x, calibration: SgaeCalibration, config: SgaeConfig = SgaeConfig(),
           global_top=None):
    """Per-row agreement, weight and blended score."""
    a = _phi(phi_l)
    b = _phi(phi_x)
    top = global_top if config.topk_mode == "global" else topk_features(a, b, config.K)
    A = np.atleast_1d(agreement(a, b, top))
    w = np.atleast_1d(adaptive_weight(A, calibration, config))
    p = np.atleast_1d(sgae_score(f_l, f_x, w))
    return A, w, p


def _explain(explainer, table):
    out = explainer(table)
    return _phi(out)


def compare(labels, p_sgae, p_static, n_boot: int = 1000, seed: int = 0) -> dict:
    """SGAE vs static: metrics, DeLong, McNemar at each blend's F1-optimal threshold."""
    tau_s, rep_s = optimal_threshold(p_sgae, labels)
    tau_b, rep_b = optimal_threshold(p_static, labels)
    static_ci = bootstrap_ci(lambda s, y: roc_auc(s, y), (p_static, labels), n_resamples=n_boot, seed=seed,
                             stratify=labels)
    return {
        "sgae": rep_s.to_dict(),
        "static": rep_b.to_dict(),
        "static_auc_ci95": list(static_ci),
        "delong_sgae_vs_static": delong_test(p_sgae, p_static, labels).to_dict(),
        "mcnemar_sgae_vs_static": mcnemar_test(p_sgae >= tau_s, p_static >= tau_b, labels).to_dict(),
    }


def run_sgae(calibration_table: DataTable, eval_table: DataTable, scorer_l, scorer_x, explainer_l, explainer_x,
             config: SgaeConfig = SgaeConfig(), n_boot: int = 1000, seed: int = 0) -> SgaeReport:
    """Calibrate sigma_A on ``calibration_table`` and score ``eval_table``.

    Explainers are callables ``table -> AttributionBatch`` (or an (n, d) array).
    Scorers are anything :func:`~shapaudit.models.score_batch` accepts.
    """
    overlap = np.intersect1d(calibration_table.row_ids, eval_table.row_ids)
    if overlap.size:
        raise ConfigurationError(f"calibration and evaluation partitions share {overlap.size} rows")
    cal_l = _explain(explainer_l, calibration_table)
    cal_x = _explain(explainer_x, calibration_table)
    global_top = None
    if config.topk_mode == "global":
        global_top = rank_descending(np.mean(np.abs(cal_l) + np.abs(cal_x), axis=0))[:config.K]
        cal_top = global_top
    else:
        cal_top = topk_features(cal_l, cal_x, config.K)
    calibration = calibrate(agreement(cal_l, cal_x, cal_top), config.epsilon)

    f_l = score_batch(scorer_l, eval_table)
    f_x = score_batch(scorer_x, eval_table)
    phi_l = _explain(explainer_l, eval_table)
    phi_x = _explain(explainer_x, eval_table)
    A, w, p = decide(phi_l, phi_x, f_l, f_x, calibration, config, global_top)
    p_static = np.atleast_1d(static_ensemble(f_l, f_x))
    report = SgaeReport(row_ids=eval_table.row_ids.copy(), f_l=f_l, f_x=f_x, A=A, w=w, p=p, p_static=p_static,
                        calibration=calibration, config=config)
    if np.unique(eval_table.y).size == 2:
        report.summary = compare(eval_table.y, p, p_static, n_boot=n_boot, seed=seed)
        report.summary["model_l"] = metric_report(f_l, eval_table.y).to_dict()
        report.summary["model_x"] = metric_report(f_x, eval_table.y).to_dict()
    return report
