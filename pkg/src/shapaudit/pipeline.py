"""Config-driven experiment stages shared by the CLI subcommands.

Every stage reads an :class:`~shapaudit.config.ExperimentConfig`, derives its
seeds from the master seed and writes deterministic report files. Wall-clock
timings only ever go to ``manifest.json``; report files carry no timestamps so
two runs of one config produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import (
    AttributionBatch,
    exact_shapley_batch,
    global_importance,
    kernel_shap_batch,
    sample_background,
    tree_shap_batch,
)
from .config import ExperimentConfig
from .dataset import (
    DataTable,
    apply_normalizer,
    chronological_split,
    fit_normalizer,
    load_table,
    smote_tomek,
    stratified_kfold,
    stratified_split,
    velocity_features,
)
from .errors import ConfigurationError, DependencyError
from .models import (
    ExternalScores,
    GBDTConfig,
    LogisticConfig,
    TreeEnsemble,
    load_external_scores,
    score_batch,
    train_gbdt,
    train_logistic,
)
from .sgae import SgaeConfig, run_sgae
from .stats import delong_test, metric_report, roc_auc
from .surrogate import make_transactions
from .xq import cross_explainer_agreement, faithfulness_report, stability_kendall_w

METRIC_KEYS = ("auc_roc", "pr_auc", "f1", "precision", "recall", "accuracy", "mcc")


# ---------------------------------------------------------------------------
# serialisation


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: Path, obj) -> Path:
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    versions: dict
    seeds: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    leakage: list = field(default_factory=list)
    overrides: dict = field(default_factory=dict)
    status: str = "running"
    failure: dict | None = None

    def stage(self, name, outputs, seconds, status="ok"):
        self.stages.append({"name": name, "outputs": sorted(str(p) for p in outputs), "seconds": round(seconds, 3),
                            "status": status})

    @property
    def outputs(self):
        return [p for s in self.stages for p in s["outputs"]]

    def to_dict(self):
        return {k: getattr(self, k) for k in ("command", "config_hash", "seed", "versions", "seeds", "stages",
                                               "leakage", "overrides", "status", "failure")}

    def write(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        return write_json(out_dir / "manifest.json", self.to_dict())


def _versions():
    import numba
    import pandas
    import scipy
    return {"shapaudit": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pandas.__version__, "numba": numba.__version__}


def new_manifest(command: str, cfg: ExperimentConfig) -> RunManifest:
    return RunManifest(command=command, config_hash=cfg.config_hash, seed=cfg.seed, versions=_versions(),
                       overrides=dict(cfg.overrides))


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
        return False


# ---------------------------------------------------------------------------
# data and partitions


def load_data(cfg: ExperimentConfig) -> DataTable:
    data = cfg["data"]
    if "surrogate" in data:
        params = dict(data["surrogate"])
        params.setdefault("seed", cfg.stage_seed("surrogate"))
        table = make_transactions(**params)
    else:
        table = load_table(cfg.resolve(data["path"]), data.get("schema") or {})
    if data.get("velocity"):
        table = velocity_features(table, data["velocity"])
    return table


@dataclass
class Partition:
    """One train/validation/test pass. ``validation`` is carved from the
    training rows and only exists when SGAE needs a calibration set."""

    name: str
    train: DataTable
    test: DataTable
    validation: DataTable | None = None
    extra_tests: dict = field(default_factory=dict)


def _carve_validation(cfg, train, name):
    if cfg["sgae"] is None:
        return train, None
    fit, val = stratified_split(train, cfg["split"]["validation_fraction"], cfg.stage_seed(name, "validation"))
    return fit, val


def make_partitions(cfg: ExperimentConfig, table: DataTable) -> list[Partition]:
    split = cfg["split"]
    kind = split["kind"]
    parts = []
    if kind == "kfold":
        plan = stratified_kfold(table, split["k"], cfg.stage_seed("kfold"))
        for f, tr, te in plan.folds():
            name = f"fold{f}"
            train, val = _carve_validation(cfg, table.take(tr), name)
            parts.append(Partition(name, train, table.take(te), val))
    elif kind == "stratified":
        train, test = stratified_split(table, split["test_fraction"], cfg.stage_seed("holdout"))
        train, val = _carve_validation(cfg, train, "holdout")
        parts.append(Partition("holdout", train, test, val))
    elif kind == "chronological":
        early, oot = chronological_split(table, split["quantile"])
        train, in_time = stratified_split(early, split["test_fraction"], cfg.stage_seed("in_time"))
        train, val = _carve_validation(cfg, train, "oot")
        parts.append(Partition("oot", train, oot, val, extra_tests={"in_time": in_time}))
    else:
        raise ConfigurationError(f"unknown split kind {kind!r}")
    return parts


@dataclass
class Prepared:
    """A partition after resampling and normalisation, ready for modelling."""

    part: Partition
    train: DataTable
    test: DataTable
    validation: DataTable | None
    extra_tests: dict
    fingerprints_before: dict


def _eval_tables(part: Partition) -> dict:
    out = {"test": part.test, **{k: v for k, v in part.extra_tests.items()}}
    if part.validation is not None:
        out["validation"] = part.validation
    return out


def prepare(cfg: ExperimentConfig, part: Partition) -> Prepared:
    before = {k: t.fingerprint() for k, t in _eval_tables(part).items()}
    train = part.train
    res = cfg["resampling"]
    if res["method"] == "smote_tomek":
        train = smote_tomek(train, k_neighbors=res["k_neighbors"], seed=cfg.stage_seed(part.name, "smote"))
    val, test, extra = part.validation, part.test, dict(part.extra_tests)
    if cfg["normalize"]:
        norm = fit_normalizer(train)
        train = apply_normalizer(norm, train)
        test = apply_normalizer(norm, test)
        val = None if val is None else apply_normalizer(norm, val)
        extra = {k: apply_normalizer(norm, v) for k, v in extra.items()}
    return Prepared(part, train, test, val, extra, before)


def leakage_record(prep: Prepared) -> dict:
    """Fingerprints of every evaluation partition before and after the
    training-side stages, plus disjointness checks."""
    after = {k: t.fingerprint() for k, t in _eval_tables(prep.part).items()}
    train_ids = prep.train.row_ids
    rec = {"partition": prep.part.name, "checks": {}}
    ok = True
    for k in sorted(after):
        ids = _eval_tables(prep.part)[k].row_ids
        entry = {
            "fingerprint_before": prep.fingerprints_before[k],
            "fingerprint_after": after[k],
            "unchanged": prep.fingerprints_before[k] == after[k],
            "n_rows": int(ids.size),
            "synthetic_rows": int(np.sum(ids < 0)),
            "overlap_with_train": int(np.intersect1d(ids, train_ids[train_ids >= 0]).size),
        }
        ok &= entry["unchanged"] and entry["synthetic_rows"] == 0 and entry["overlap_with_train"] == 0
        rec["checks"][k] = entry
    rec["train_rows"] = int(train_ids.size)
    rec["train_synthetic_rows"] = int(np.sum(train_ids < 0))
    rec["ok"] = bool(ok)
    return rec


class LeakageError(ConfigurationError):
    pass


# ---------------------------------------------------------------------------
# models


def fit_models(cfg: ExperimentConfig, prep: Prepared, full: DataTable) -> dict:
    models = {}
    for name in sorted(cfg["models"]):
        spec = dict(cfg["models"][name])
        kind = spec.pop("kind")
        params = dict(spec.get("params") or {})
        if kind == "logistic":
            params.setdefault("seed", cfg.stage_seed(prep.part.name, "model", name))
            models[name] = train_logistic(prep.train, LogisticConfig(**params))
        elif kind == "gbdt":
            params.setdefault("seed", cfg.stage_seed(prep.part.name, "model", name))
            models[name] = train_gbdt(prep.train, GBDTConfig(**params))
        elif kind == "external":
            models[name] = load_external_scores(cfg.resolve(spec["path"]), len(full), full.feature_names)
        else:
            raise ConfigurationError(f"unknown model kind {kind!r}")
    return models


def model_metrics(models: dict, table: DataTable) -> dict:
    out = {}
    scores = {}
    for name, m in models.items():
        scores[name] = score_batch(m, table)
        out[name] = metric_report(scores[name], table.y).to_dict()
    pairs = {}
    for a, b in combinations(sorted(models), 2):
        pairs[f"{a}_vs_{b}"] = delong_test(scores[a], scores[b], table.y).to_dict()
    return {"models": out, "delong": pairs, "n_rows": len(table), "n_positive": int(table.y.sum())}


def aggregate(fold_reports: list[dict]) -> dict:
    """Mean and sample standard deviation of each metric across folds."""
    out = {}
    names = sorted(fold_reports[0]["test"]["models"])
    for name in names:
        out[name] = {}
        for key in METRIC_KEYS:
            vals = np.array([r["test"]["models"][name][key] for r in fold_reports], dtype=float)
            std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out[name][key] = {"mean": float(np.mean(vals)), "std": std}
    return out


def _fmt_pm(d):
    return f"{d['mean']:.4f} ± {d['std']:.4f}"


def render_run_summary(report: dict) -> str:
    lines = [f"split: {report['split']}", ""]
    for part in report["partitions"]:
        lines.append(f"[{part['partition']}] test rows={part['test']['n_rows']} "
                     f"positives={part['test']['n_positive']}")
        for name, m in sorted(part["test"]["models"].items()):
            lines.append(f"  {name:<16} AUC={m['auc_roc']:.4f} PR-AUC={m['pr_auc']:.4f} F1={m['f1']:.4f} "
                         f"MCC={m['mcc']:.4f} tau*={m['tau_star']:.4f}")
        for name, d in sorted(part.get("drift", {}).items()):
            lines.append(f"  {name:<16} in-time AUC={d['auc_in_time']:.4f} out-of-time AUC={d['auc_oot']:.4f} "
                         f"delta_auc={d['delta_auc']:+.4f}")
    if "aggregate" in report:
        lines += ["", "mean ± std across folds"]
        for name, ms in sorted(report["aggregate"].items()):
            lines.append(f"  {name:<16} " + "  ".join(f"{k}={_fmt_pm(ms[k])}" for k in ("auc_roc", "pr_auc", "f1")))
    return "\n".join(lines) + "\n"


def cmd_run(cfg: ExperimentConfig, manifest: RunManifest) -> dict:
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    with _Timer() as t:
        table = load_data(cfg)
        parts = make_partitions(cfg, table)
    manifest.stage("ingest_split", [], t.seconds)
    manifest.seeds.update({"master": cfg.seed})

    part_reports = []
    for part in parts:
        with _Timer() as t:
            prep = prepare(cfg, part)
            models = fit_models(cfg, prep, table)
            rep = {"partition": part.name, "train_rows": len(prep.train),
                   "test": model_metrics(models, prep.test)}
            if prep.validation is not None:
                rep["validation_rows"] = len(prep.validation)
            if "in_time" in prep.extra_tests:
                in_time = model_metrics(models, prep.extra_tests["in_time"])
                rep["in_time"] = in_time
                rep["drift"] = {
                    n: {"auc_in_time": in_time["models"][n]["auc_roc"], "auc_oot": rep["test"]["models"][n]["auc_roc"],
                        "delta_auc": rep["test"]["models"][n]["auc_roc"] - in_time["models"][n]["auc_roc"]}
                    for n in sorted(models)}
            leak = leakage_record(prep)
            manifest.leakage.append(leak)
            if not leak["ok"]:
                raise LeakageError(f"leakage check failed on partition {part.name}")
            path = write_json(out_dir / f"report_{part.name}.json", rep)
        manifest.stage(f"partition:{part.name}", [path.name], t.seconds)
        manifest.seeds[part.name] = {n: cfg.stage_seed(part.name, "model", n) for n in sorted(cfg["models"])}
        part_reports.append(rep)

    report = {"split": cfg["split"]["kind"], "config_hash": cfg.config_hash, "partitions": part_reports}
    if cfg["split"]["kind"] == "kfold":
        report["aggregate"] = aggregate(part_reports)
    with _Timer() as t:
        files = [write_json(out_dir / "report.json", report).name]
        (out_dir / "summary.txt").write_text(render_run_summary(report), encoding="utf-8")
        files.append("summary.txt")
    manifest.stage("report", files, t.seconds)
    return report


# ---------------------------------------------------------------------------
# attributions


def primary_partition(cfg: ExperimentConfig, table: DataTable) -> Partition:
    """The partition that attribution-based stages run on: the holdout, the
    out-of-time test, or the first fold of a k-fold plan."""
    return make_partitions(cfg, table)[0]


def _explain_subset(table: DataTable, limit, seed) -> DataTable:
    if limit is None or len(table) <= limit:
        return table
    if np.unique(table.y).size == 2:
        _, sub = stratified_split(table, limit / len(table), seed)
        return sub
    rng = np.random.default_rng(seed)
    return table.take(np.sort(rng.choice(len(table), size=limit, replace=False)))


def make_explainer(cfg: ExperimentConfig, name: str, model, prep: Prepared):
    """Callable ``table -> AttributionBatch`` for a configured model."""
    if name not in cfg["attribution"]:
        raise DependencyError(f"model {name!r} has no attributions; add an attribution.{name} entry "
                              "(stage: attribution)")
    spec = cfg["attribution"][name]
    method = spec["method"]
    names = prep.train.feature_names
    if method == "external":
        if not isinstance(model, ExternalScores) or not model.has_attributions:
            raise DependencyError(f"external attributions for {name!r} are missing; the score file needs "
                                  "phi_<feature> columns (stage: attribution)")

        def explain(t):
            idx = model.lookup(t.row_ids)
            fx = model.phi0[idx] + model.phi[idx].sum(axis=1)
            return AttributionBatch(model.phi0[idx], model.phi[idx], fx, t.row_ids.copy(), "external", names)

        return explain
    background = sample_background(prep.train, spec["background_size"], cfg.stage_seed(prep.part.name, "bg", name))
    seed = cfg.stage_seed(prep.part.name, "attribution", name)
    if method == "tree":
        if not isinstance(model, TreeEnsemble):
            raise ConfigurationError(f"tree attribution needs a gbdt model ({name!r})")
        return lambda t: tree_shap_batch(model, t.X, background, t.row_ids, names)
    output = spec.get("output") or "proba"
    if method == "kernel":
        n_coal = spec["n_coalitions"]
        return lambda t: kernel_shap_batch(model, t.X, background, n_coal, seed, t.row_ids, output, names)
    if method == "exact":
        return lambda t: exact_shapley_batch(model, t.X, background, t.row_ids, output, names)
    raise ConfigurationError(f"unknown attribution method {method!r}")


def write_attributions(path: Path, batch: AttributionBatch, feature_names) -> Path:
    header = ["row_id", "phi0", "fx", *(f"phi_{f}" for f in feature_names)]
    rows = ([int(r), float(p0), float(fx), *map(float, phi)]
            for r, p0, fx, phi in zip(batch.row_ids, batch.phi0, batch.fx, batch.phi))
    return write_csv(path, header, rows)


def _prepared_primary(cfg, manifest):
    with _Timer() as t:
        table = load_data(cfg)
        part = primary_partition(cfg, table)
        prep = prepare(cfg, part)
        models = fit_models(cfg, prep, table)
        leak = leakage_record(prep)
        manifest.leakage.append(leak)
        if not leak["ok"]:
            raise LeakageError(f"leakage check failed on partition {part.name}")
    manifest.stage("ingest_split_train", [], t.seconds)
    manifest.seeds["master"] = cfg.seed
    return table, prep, models


# ---------------------------------------------------------------------------
# explanation quality


def render_xq_summary(faith: dict, stab: dict, agree: dict) -> str:
    lines = ["faithfulness"]
    for name, rep in sorted(faith.items()):
        for r in rep["by_k"]:
            lines.append(f"  {name:<16} k={r['k']:<3} sufficiency={r['sufficiency_auc']:.4f} "
                         f"comprehensiveness={r['comprehensiveness_drop']:+.4f} full={r['full_auc']:.4f}")
    lines.append("stability (Kendall's W)")
    for name, rep in sorted(stab.items()):
        lines.append(f"  {name:<16} W={rep['kendall_w']:.4f} band={rep['stability_band']}")
    lines.append("agreement (Spearman rho over top-n union)")
    for key, rep in sorted(agree.items()):
        lines.append(f"  {key:<24} rho={rep['spearman_rho']:.4f} CI95=[{rep['ci_low']:.4f}, {rep['ci_high']:.4f}] "
                     f"p={rep['p_value_str']}")
    return "\n".join(lines) + "\n"


def _reuse(batch: AttributionBatch):
    """Explainer that serves rows already explained in ``batch``."""
    pos = {int(r): i for i, r in enumerate(batch.row_ids)}
    return lambda t: batch.take(np.array([pos[int(r)] for r in t.row_ids], dtype=np.int64))


def cmd_xq(cfg: ExperimentConfig, manifest: RunManifest) -> dict:
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    table, prep, models = _prepared_primary(cfg, manifest)
    xq = cfg["xq"]
    names = sorted(cfg["attribution"])
    if not names:
        raise DependencyError("no attributions configured; add an attribution section (stage: attribution)")
    eval_table = _explain_subset(prep.test, xq.get("explain_rows"), cfg.stage_seed(prep.part.name, "explain_rows"))

    batches, explainers = {}, {}
    with _Timer() as t:
        files = []
        for name in names:
            explainers[name] = make_explainer(cfg, name, models[name], prep)
            batches[name] = explainers[name](eval_table)
            files.append(write_attributions(out_dir / f"attributions_{name}.csv", batches[name],
                                            prep.train.feature_names).name)
    manifest.stage("attribution", files, t.seconds)

    faith = {}
    with _Timer() as t:
        bg_mask = sample_background(prep.train, 1000, cfg.stage_seed(prep.part.name, "mask_bg"))
        for name in names:
            if isinstance(models[name], ExternalScores):
                continue
            imp = global_importance(batches[name])
            rep = faithfulness_report(models[name], eval_table, imp, bg_mask, ks=xq["ks"], strategy=xq["strategy"],
                                      seed=cfg.stage_seed(prep.part.name, "mask", name),
                                      per_instance_phi=batches[name].phi if xq["per_instance"] else None)
            faith[name] = rep.to_dict()
        files = [write_json(out_dir / "faithfulness.json", faith).name]
    manifest.stage("faithfulness", files, t.seconds)

    stab = {}
    with _Timer() as t:
        size = min(xq["subsample_size"], len(eval_table))
        for name in names:
            fn = _reuse(batches[name])
            rep = stability_kendall_w(fn, eval_table, xq["n_subsamples"], size,
                                      seed=cfg.stage_seed(prep.part.name, "stability"))
            stab[name] = rep.to_dict()
        files = [write_json(out_dir / "stability.json", stab).name]
    manifest.stage("stability", files, t.seconds)

    agree = {}
    with _Timer() as t:
        pairs = xq["pairs"] or [list(p) for p in combinations(names, 2)]
        for a, b in pairs:
            rep = cross_explainer_agreement(global_importance(batches[a]), global_importance(batches[b]),
                                            top_n=xq["top_n"], n_boot=xq["n_boot"],
                                            seed=cfg.stage_seed(prep.part.name, "agreement", a, b),
                                            phi_a=batches[a].phi, phi_b=batches[b].phi, labels=(a, b))
            agree[f"{a}__{b}"] = rep.to_dict()
        files = [write_json(out_dir / "agreement.json", agree).name]
        (out_dir / "xq_summary.txt").write_text(render_xq_summary(faith, stab, agree), encoding="utf-8")
        files.append("xq_summary.txt")
    manifest.stage("agreement", files, t.seconds)
    return {"faithfulness": faith, "stability": stab, "agreement": agree}


# ---------------------------------------------------------------------------
# adaptive ensemble


def render_sgae_summary(summary: dict) -> str:
    lines = [f"rows={summary['n_rows']} divergent={summary['n_divergent']} "
             f"sigma_A={summary['calibration']['sigma_A']:.6f} mean_w={summary['mean_w']:.4f}"]
    for key in ("sgae", "static", "model_l", "model_x"):
        if key in summary:
            m = summary[key]
            lines.append(f"  {key:<8} AUC={m['auc_roc']:.4f} PR-AUC={m['pr_auc']:.4f} F1={m['f1']:.4f} "
                         f"MCC={m['mcc']:.4f}")
    if "delong_sgae_vs_static" in summary:
        d = summary["delong_sgae_vs_static"]
        mc = summary["mcnemar_sgae_vs_static"]
        lines.append(f"  DeLong z={d['statistic']:.4f} p={d['p_value_str']}")
        lines.append(f"  McNemar chi2={mc['statistic']:.4f} p={mc['p_value_str']}")
    return "\n".join(lines) + "\n"


def cmd_sgae(cfg: ExperimentConfig, manifest: RunManifest) -> dict:
    sg = cfg["sgae"]
    if sg is None:
        raise DependencyError("no sgae section configured")
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    table, prep, models = _prepared_primary(cfg, manifest)
    if prep.validation is None:
        raise DependencyError("SGAE needs a validation partition for calibration")
    for role in ("model_l", "model_x"):
        if sg[role] not in models:
            raise DependencyError(f"sgae.{role} names unknown model {sg[role]!r} (stage: models)")
    with _Timer() as t:
        explain_l = make_explainer(cfg, sg["model_l"], models[sg["model_l"]], prep)
        explain_x = make_explainer(cfg, sg["model_x"], models[sg["model_x"]], prep)
        config = SgaeConfig(K=sg["K"], tau_a=sg["tau_a"], w_min=sg["w_min"], w_max=sg["w_max"],
                            topk_mode=sg["topk_mode"])
        seed = cfg.stage_seed(prep.part.name, "sgae")
        manifest.seeds["sgae"] = seed
        report = run_sgae(prep.validation, prep.test, models[sg["model_l"]], models[sg["model_x"]],
                          explain_l, explain_x, config, n_boot=sg["n_boot"], seed=seed)
        summary = report.summary_dict()
        summary.update({"model_l_name": sg["model_l"], "model_x_name": sg["model_x"],
                        "calibration_rows": len(prep.validation), "partition": prep.part.name})
        files = [
            write_csv(out_dir / "sgae_rows.csv", ["row_id", "fL", "fX", "A", "branch", "w", "p"], report.rows()).name,
            write_json(out_dir / "sgae_summary.json", summary).name,
        ]
        (out_dir / "sgae_summary.txt").write_text(render_sgae_summary(summary), encoding="utf-8")
        files.append("sgae_summary.txt")
    manifest.stage("sgae", files, t.seconds)
    return summary


COMMANDS = {"run": cmd_run, "xq": cmd_xq, "sgae": cmd_sgae}


def execute(command: str, cfg: ExperimentConfig) -> tuple[int, RunManifest]:
    """Run one subcommand; always leaves a manifest behind. Returns (exit code, manifest)."""
    manifest = new_manifest(command, cfg)
    out_dir = cfg.output_dir
    try:
        COMMANDS[command](cfg, manifest)
    except Exception as exc:  # any stage failure becomes a recorded, partial manifest
        manifest.status = "failed"
        done = {s["name"] for s in manifest.stages}
        manifest.failure = {"error": type(exc).__name__, "message": str(exc), "completed_stages": sorted(done)}
        manifest.write(out_dir)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2, manifest
    manifest.status = "ok"
    manifest.write(out_dir)
    return 0, manifest


__all__ = ["RunManifest", "cmd_run", "cmd_xq", "cmd_sgae", "execute", "load_data", "make_partitions", "prepare",
           "leakage_record", "make_explainer", "dumps"]
