"""Binary-classification metrics and the hypothesis tests used to compare models
and explanations.

Everything here is a pure function of its inputs (plus an explicit seed for the
bootstrap), so results are reproducible bit-for-bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps

from .errors import DegenerateInputError, ResampleError, ShapeError, UndefinedMetricError


@dataclass(frozen=True)
class MetricReport:
    auc_roc: float
    pr_auc: float
    f1: float
    precision: float
    recall: float
    accuracy: float
    mcc: float
    tau_star: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConfusionReport:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    mcc: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    n: int

    __test__ = False  # keep pytest from collecting this as a test class

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "p_value_str": f"{self.p_value:.4f}",
            "method": self.method,
            "n": self.n,
        }


def _binary_inputs(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"scores has {scores.size} entries but labels has {labels.size}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return scores, labels.astype(np.int64)


def _require_both_classes(labels, what):
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError(f"{what} is undefined when only one class is present")
    return n_pos, labels.size - n_pos


def midrank(x) -> np.ndarray:
    """1-based ranks with ties given the average of the ranks they span."""
    return sps.rankdata(np.asarray(x, dtype=float), method="average")


def roc_auc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with midranks for ties."""
    scores, labels = _binary_inputs(scores, labels)
    n_pos, n_neg = _require_both_classes(labels, "ROC-AUC")
    ranks = midrank(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Average precision: sum over distinct thresholds of (delta recall) * precision."""
    scores, labels = _binary_inputs(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PR-AUC is undefined without positives")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tps = np.cumsum(y)
    fps = np.cumsum(1 - y)
    # keep the last index of each block of tied scores
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = tps[last].astype(float)
    precision = tp / (tp + fps[last])
    recall = tp / n_pos
    delta = np.diff(np.r_[0.0, recall])
    return float(np.sum(delta * precision))


def _confusion_counts(scores, labels, threshold):
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    return tp, fp, tn, fn


def rates_from_counts(tp: int, fp: int, tn: int, fn: int) -> dict:
    """Precision, recall, F1, accuracy and MCC with the zero-denominator conventions:
    precision=0 with no positive predictions, recall=0 with no positives, F1=0
    when precision+recall=0, MCC=0 when any confusion marginal is zero."""
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / n if n else 0.0
    marginals = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(marginals) if marginals else 0.0
    return {"precision": precision, "recall": recall, "f1": f1, "accuracy": accuracy, "mcc": mcc}


def confusion_at(scores, labels, threshold: float) -> ConfusionReport:
    """Counts and rates when predicting positive for ``score >= threshold``."""
    scores, labels = _binary_inputs(scores, labels)
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    tp, fp, tn, fn = _confusion_counts(scores, labels, threshold)
    return ConfusionReport(threshold=float(threshold), tp=tp, fp=fp, tn=tn, fn=fn,
                           **rates_from_counts(tp, fp, tn, fn))


def threshold_candidates(scores) -> np.ndarray:
    return np.unique(np.r_[np.asarray(scores, dtype=float), 0.0, 1.0])


def f1_curve(scores, labels):
    """F1 at every candidate threshold (distinct scores plus 0 and 1), ascending."""
    scores, labels = _binary_inputs(scores, labels)
    cand = threshold_candidates(scores)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    tp = pos.size - np.searchsorted(pos, cand, side="left")
    fp = neg.size - np.searchsorted(neg, cand, side="left")
    fn = pos.size - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return cand, f1


def optimal_threshold(scores, labels) -> tuple[float, MetricReport]:
    """Smallest candidate threshold attaining the maximum F1, with the full report there."""
    scores, labels = _binary_inputs(scores, labels)
    _require_both_classes(labels, "F1-optimal threshold")
    cand, f1 = f1_curve(scores, labels)
    tau = float(cand[int(np.argmax(f1))])
    return tau, metric_report(scores, labels, tau)


def metric_report(scores, labels, threshold: float | None = None) -> MetricReport:
    """Every headline metric; ``threshold=None`` means use the F1-optimal one."""
    scores, labels = _binary_inputs(scores, labels)
    if threshold is None:
        return optimal_threshold(scores, labels)[1]
    c = confusion_at(scores, labels, threshold)
    return MetricReport(
        auc_roc=roc_auc(scores, labels),
        pr_auc=pr_auc(scores, labels),
        f1=c.f1,
        precision=c.precision,
        recall=c.recall,
        accuracy=c.accuracy,
        mcc=c.mcc,
        tau_star=float(threshold),
        tp=c.tp,
        fp=c.fp,
        tn=c.tn,
        fn=c.fn,
    )


def _delong_components(scores_2d, labels):
    pos = scores_2d[:, labels == 1]
    neg = scores_2d[:, labels == 0]
    m, n = pos.shape[1], neg.shape[1]
    k = scores_2d.shape[0]
    v10 = np.empty((k, m))
    v01 = np.empty((k, n))
    aucs = np.empty(k)
    for r in range(k):
        tx = midrank(pos[r])
        ty = midrank(neg[r])
        tz = midrank(np.r_[pos[r], neg[r]])
        aucs[r] = (tz[:m].sum() - m * (m + 1) / 2.0) / (m * n)
        v10[r] = (tz[:m] - tx) / n
        v01[r] = 1.0 - (tz[m:] - ty) / m
    return aucs, v10, v01


def delong_test(scores_a, scores_b, labels) -> TestResult:
    """Paired DeLong test for equal ROC-AUC of two scorers on the same rows.

    The statistic is z = (AUC_a - AUC_b) / sd, two-sided p from the normal.
    A zero-variance difference gives z=0, p=1.
    """
    a, labels = _binary_inputs(scores_a, labels)
    b, _ = _binary_inputs(scores_b, labels)
    m, n = _require_both_classes(labels, "DeLong test")
    aucs, v10, v01 = _delong_components(np.vstack([a, b]), labels)
    s10 = np.cov(v10) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(v01) if n > 1 else np.zeros((2, 2))
    cov = s10 / m + s01 / n
    var = cov[0, 0] + cov[1, 1] - 2 * cov[0, 1]
    diff = aucs[0] - aucs[1]
    if not var > 1e-300 or diff == 0.0:
        return TestResult(statistic=0.0, p_value=1.0, method="delong", n=labels.size)
    z = float(diff / math.sqrt(var))
    p = float(min(1.0, 2.0 * sps.norm.sf(abs(z))))
    return TestResult(statistic=z, p_value=p, method="delong", n=labels.size)


def delong_variance(scores, labels) -> float:
    """DeLong variance of a single AUC estimate."""
    s, labels = _binary_inputs(scores, labels)
    m, n = _require_both_classes(labels, "DeLong variance")
    _, v10, v01 = _delong_components(s[None, :], labels)
    var10 = np.var(v10[0], ddof=1) if m > 1 else 0.0
    var01 = np.var(v01[0], ddof=1) if n > 1 else 0.0
    return float(var10 / m + var01 / n)


def mcnemar_test(preds_a, preds_b, labels, method: str = "chi2") -> TestResult:
    """McNemar's test on the discordant errors of two paired classifiers.

    ``b`` counts rows A gets wrong and B gets right, ``c`` the reverse.
    ``method="chi2"`` uses the continuity-corrected statistic (|b-c|-1)^2/(b+c)
    against chi-square(1). ``method="auto"`` switches to the exact two-sided
    binomial test when b+c < 25; the reported statistic is then the chi-square
    value with the same tail probability. ``method="exact"`` always uses the
    binomial test.
    """
    pa = np.asarray(preds_a).astype(int).ravel()
    pb = np.asarray(preds_b).astype(int).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if not (pa.shape == pb.shape == y.shape):
        raise ShapeError("predictions and labels must be aligned")
    a_ok = pa == y
    b_ok = pb == y
    b = int(np.sum(~a_ok & b_ok))
    c = int(np.sum(a_ok & ~b_ok))
    return mcnemar_from_counts(b, c, method=method, n=y.size)


def mcnemar_from_counts(b: int, c: int, method: str = "chi2", n: int | None = None) -> TestResult:
    if method not in ("chi2", "auto", "exact"):
        raise ValueError(f"unknown McNemar method {method!r}")
    n = b + c if n is None else n
    if b + c == 0:
        return TestResult(statistic=0.0, p_value=1.0, method=f"mcnemar-{method}", n=n)
    if method == "exact" or (method == "auto" and b + c < 25):
        p = float(sps.binomtest(b, b + c, 0.5).pvalue)
        p = min(1.0, p)
        stat = float(sps.chi2.isf(p, 1)) if p < 1.0 else 0.0
        return TestResult(statistic=stat, p_value=p, method="mcnemar-exact", n=n)
    stat = (abs(b - c) - 1) ** 2 / (b + c)
    p = float(sps.chi2.sf(stat, 1))
    return TestResult(statistic=float(stat), p_value=p, method="mcnemar-chi2", n=n)


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    return float(np.dot(a, b) / denom)


def spearman(x, y) -> tuple[float, float]:
    """Spearman rho (Pearson correlation of average ranks) and two-sided p.

    The p-value uses the t approximation for n >= 10 and an exact permutation
    distribution over all n! orderings for n < 10.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ShapeError("spearman needs equal-length inputs")
    n = x.size
    if n < 3:
        raise DegenerateInputError("spearman needs at least 3 paired values")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInputError("spearman is undefined when one side is constant")
    rx, ry = midrank(x), midrank(y)
    rho = _pearson(rx, ry)
    rho = max(-1.0, min(1.0, rho))
    if n >= 10:
        if abs(rho) >= 1.0:
            return rho, 0.0
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        return rho, float(min(1.0, 2.0 * sps.t.sf(abs(t), n - 2)))
    perms = np.array(list(itertools.permutations(range(n))))
    ryc = ry - ry.mean()
    rxc = rx - rx.mean()
    denom = math.sqrt(float(np.dot(rxc, rxc)) * float(np.dot(ryc, ryc)))
    null = (ryc[perms] @ rxc) / denom
    p = float(np.mean(np.abs(null) >= abs(rho) - 1e-12))
    return rho, min(1.0, p)


def kendall_w(rank_matrix) -> float:
    """Kendall's coefficient of concordance with the tie correction.

    ``rank_matrix`` is m judges x n items. Rows are re-ranked with average ranks
    so raw scores are accepted too (larger value -> larger rank).
    """
    r = np.asarray(rank_matrix, dtype=float)
    if r.ndim != 2:
        raise ShapeError("rank_matrix must be 2-D (judges x items)")
    m, n = r.shape
    if m < 2 or n < 2:
        raise ShapeError("kendall_w needs at least 2 judges and 2 items")
    ranks = np.vstack([midrank(row) for row in r])
    ties = 0.0
    for row in ranks:
        _, counts = np.unique(row, return_counts=True)
        ties += float(np.sum(counts.astype(float) ** 3 - counts))
    totals = ranks.sum(axis=0)
    s = float(np.sum((totals - totals.mean()) ** 2))
    denom = m * m * (n**3 - n) - m * ties
    if denom <= 0:
        # every judge ties every item: rankings are identical by construction
        return 1.0
    return float(min(1.0, max(0.0, 12.0 * s / denom)))


def bootstrap_ci(statistic_fn, data, n_resamples: int = 1000, level: float = 0.95, seed: int = 0,
                 stratify=None) -> tuple[float, float]:
    """Percentile bootstrap interval of ``statistic_fn`` over row resamples of ``data``.

    ``data`` may be an array or a tuple of row-aligned arrays; the statistic is
    called with the resampled object of the same kind. ``stratify`` (a label
    vector) resamples within each class so every replicate keeps both classes.
    """
    values = bootstrap_distribution(statistic_fn, data, n_resamples, seed, stratify=stratify)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def bootstrap_distribution(statistic_fn, data, n_resamples: int = 1000, seed: int = 0,
                           stratify=None) -> np.ndarray:
    is_tuple = isinstance(data, tuple)
    arrays = tuple(np.asarray(a) for a in data) if is_tuple else (np.asarray(data),)
    n = arrays[0].shape[0]
    if n < 2:
        raise ValueError("bootstrap needs at least 2 rows")
    if any(a.shape[0] != n for a in arrays):
        raise ShapeError("bootstrap arrays must be row-aligned")
    rng = np.random.default_rng(seed)
    groups = None
    if stratify is not None:
        strat = np.asarray(stratify).ravel()
        groups = [np.flatnonzero(strat == v) for v in np.unique(strat)]
    out = np.empty(n_resamples)
    for i in range(n_resamples):
        if groups is None:
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.concatenate([g[rng.integers(0, g.size, size=g.size)] for g in groups])
        sample = tuple(a[idx] for a in arrays)
        try:
            out[i] = statistic_fn(*sample) if is_tuple else statistic_fn(sample[0])
        except Exception as exc:
            raise ResampleError(f"statistic failed on bootstrap resample {i}: {exc}", index=i) from exc
    return out
