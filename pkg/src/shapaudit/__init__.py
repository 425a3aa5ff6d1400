"""Shapley attribution auditing for fraud-detection scorers.

Submodules: :mod:`dataset` (ingest, splits, resampling), :mod:`models`
(logistic, boosted trees, external scores), :mod:`attribution` (exact, kernel
and tree Shapley values), :mod:`xq` (faithfulness, stability, agreement),
:mod:`sgae` (agreement-weighted ensemble), :mod:`stats` (metrics and tests)
and :mod:`cli`.
"""

__version__ = "0.1.0"

from .attribution import (  # noqa: E402
    AttributionBatch,
    AttributionVector,
    GlobalImportance,
    exact_shapley,
    global_importance,
    kernel_shap,
    kernel_shap_batch,
    tree_shap,
    tree_shap_batch,
)
from .dataset import DataTable, load_table, smote_tomek, stratified_kfold, stratified_split  # noqa: E402
from .models import GBDTConfig, LogisticConfig, train_gbdt, train_logistic  # noqa: E402
from .sgae import SgaeConfig, adaptive_weight, agreement, run_sgae, sgae_score, static_ensemble  # noqa: E402
from .stats import delong_test, kendall_w, mcnemar_test, metric_report, pr_auc, roc_auc, spearman  # noqa: E402
from .xq import comprehensiveness, cross_explainer_agreement, stability_kendall_w, sufficiency  # noqa: E402

__all__ = [
    "AttributionBatch", "AttributionVector", "GlobalImportance", "exact_shapley", "global_importance",
    "kernel_shap", "kernel_shap_batch", "tree_shap", "tree_shap_batch",
    "DataTable", "load_table", "smote_tomek", "stratified_kfold", "stratified_split",
    "GBDTConfig", "LogisticConfig", "train_gbdt", "train_logistic",
    "SgaeConfig", "adaptive_weight", "agreement", "run_sgae", "sgae_score", "static_ensemble",
    "delong_test", "kendall_w", "mcnemar_test", "metric_report", "pr_auc", "roc_auc", "spearman",
    "comprehensiveness", "cross_explainer_agreement", "stability_kendall_w", "sufficiency",
]
