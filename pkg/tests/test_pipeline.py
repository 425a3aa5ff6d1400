import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from shapaudit.cli import main
from shapaudit.config import load_config, parse_config, validate_config
from shapaudit.pipeline import dumps, leakage_record, load_data, make_partitions, prepare

ROOT = Path(__file__).resolve().parents[1]
TOY = ROOT / "data" / "toy_transactions.csv"
SCHEMA = {"label": "label", "time": "time", "account": "account", "aux": ["merchant"]}


def base_config(out, **over):
    cfg = {
        "config_version": 1,
        "seed": 3,
        "data": {"path": str(TOY), "schema": SCHEMA},
        "split": {"kind": "kfold", "k": 3},
        "resampling": {"method": "smote_tomek", "scope": "train"},
        "models": {
            "logreg": {"kind": "logistic", "params": {"epochs": 80}},
            "gbdt": {"kind": "gbdt", "params": {"n_trees": 15, "max_depth": 3, "learning_rate": 0.3}},
        },
        "output": {"dir": str(out)},
    }
    cfg.update(over)
    return cfg


def write_cfg(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return p


def read(path):
    return json.loads(Path(path).read_text())


# --- validation


def test_validate_ok(tmp_path, capsys):
    p = write_cfg(tmp_path, base_config(tmp_path / "o"))
    assert main(["validate", "--config", str(p)]) == 0


def test_validate_smote_on_full_table(tmp_path, capsys):
    cfg = base_config(tmp_path / "o", resampling={"method": "smote_tomek", "scope": "full"})
    assert main(["validate", "--config", str(write_cfg(tmp_path, cfg))]) == 1
    assert "within-folds rule" in capsys.readouterr().err


def test_validate_calibration_on_test(tmp_path, capsys):
    cfg = base_config(tmp_path / "o", attribution={"gbdt": {"method": "tree"}, "logreg": {"method": "kernel"}},
                      sgae={"model_l": "logreg", "model_x": "gbdt", "calibration": "test"})
    assert main(["validate", "--config", str(write_cfg(tmp_path, cfg))]) == 1
    assert "never the test set" in capsys.readouterr().err


@pytest.mark.parametrize("mutate, needle", [
    (lambda c: c["data"].update(path="nope.csv"), "does not exist"),
    (lambda c: c.pop("seed"), "seed"),
    (lambda c: c.update(config_version=2), "config_version"),
    (lambda c: c.update(attribution={"ghost": {"method": "tree"}}), "unknown model"),
    (lambda c: c.update(attribution={"logreg": {"method": "tree"}}), "gbdt"),
    (lambda c: c["models"].update(ext={"kind": "external", "path": "missing.csv"}), "score file"),
    (lambda c: c.update(extra=1), "unknown top-level"),
])
def test_validate_rejects(tmp_path, capsys, mutate, needle):
    cfg = base_config(tmp_path / "o")
    mutate(cfg)
    assert main(["validate", "--config", str(write_cfg(tmp_path, cfg))]) == 1
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "absent.yaml")]) == 1


def test_stage_seeds_are_named_and_stable():
    a = parse_config({"seed": 1})
    assert a.stage_seed("x") == parse_config({"seed": 1}).stage_seed("x")
    assert a.stage_seed("x") != a.stage_seed("y")
    assert a.stage_seed("x") != parse_config({"seed": 2}).stage_seed("x")


def test_overrides_recorded(tmp_path):
    p = write_cfg(tmp_path, base_config(tmp_path / "o"))
    cfg = load_config(p, seed=11, out_dir=str(tmp_path / "elsewhere"))
    assert cfg.seed == 11 and cfg.overrides == {"seed": 11, "output.dir": str(tmp_path / "elsewhere")}
    # the output location is not part of the content hash
    assert cfg.config_hash == load_config(p, seed=11).config_hash


# --- run


def test_kfold_run_structure(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(write_cfg(tmp_path, base_config(out)))]) == 0
    for f in range(3):
        assert (out / f"report_fold{f}.json").exists()
    rep = read(out / "report.json")
    assert len(rep["partitions"]) == 3
    agg = rep["aggregate"]["gbdt"]["auc_roc"]
    assert set(agg) == {"mean", "std"}
    aucs = [p["test"]["models"]["gbdt"]["auc_roc"] for p in rep["partitions"]]
    assert agg["mean"] == pytest.approx(np.mean(aucs), abs=1e-15)
    assert agg["std"] == pytest.approx(np.std(aucs, ddof=1), abs=1e-15)
    assert "mean ± std" in (out / "summary.txt").read_text()
    man = read(out / "manifest.json")
    assert man["status"] == "ok"
    assert all(rec["ok"] for rec in man["leakage"])
    assert {"report.json", "summary.txt"} <= {o for s in man["stages"] for o in s["outputs"]}


def test_chronological_run_reports_drift(tmp_path):
    out = tmp_path / "o"
    cfg = base_config(out, split={"kind": "chronological", "quantile": 0.7, "test_fraction": 0.2})
    assert main(["run", "--config", str(write_cfg(tmp_path, cfg))]) == 0
    part = read(out / "report.json")["partitions"][0]
    d = part["drift"]["logreg"]
    assert d["delta_auc"] == pytest.approx(d["auc_oot"] - d["auc_in_time"], abs=1e-15)


def test_holdout_run_single_pass(tmp_path):
    out = tmp_path / "o"
    cfg = base_config(out, split={"kind": "stratified", "test_fraction": 0.3})
    assert main(["run", "--config", str(write_cfg(tmp_path, cfg))]) == 0
    rep = read(out / "report.json")
    assert [p["partition"] for p in rep["partitions"]] == ["holdout"]
    assert "aggregate" not in rep
    assert "gbdt_vs_logreg" in rep["partitions"][0]["test"]["delong"]


def test_velocity_columns_used(tmp_path):
    cfg = base_config(tmp_path / "o", data={"path": str(TOY), "schema": SCHEMA,
                                            "velocity": {"amount": "amount", "merchant": "merchant",
                                                         "location": ["loc_x", "loc_y"]}})
    table = load_data(parse_config(cfg))
    assert table.feature_names[-1] == "vel_distance_from_prev"


def test_leakage_record_detects_in_place_mutation(tmp_path):
    cfg = parse_config(base_config(tmp_path / "o"))
    part = make_partitions(cfg, load_data(cfg))[0]
    prep = prepare(cfg, part)
    assert leakage_record(prep)["ok"]
    part.test.X[0, 0] += 1.0
    rec = leakage_record(prep)
    assert not rec["ok"] and not rec["checks"]["test"]["unchanged"]


def test_runtime_failure_leaves_partial_manifest(tmp_path, capsys):
    bad = tmp_path / "scores.csv"
    bad.write_text("score\n0.5\n0.5\n")
    cfg = base_config(tmp_path / "o")
    cfg["models"]["ext"] = {"kind": "external", "path": str(bad)}
    assert main(["run", "--config", str(write_cfg(tmp_path, cfg))]) == 2
    man = read(tmp_path / "o" / "manifest.json")
    assert man["status"] == "failed"
    assert man["failure"]["error"] == "AlignmentError"
    assert "ingest_split" in man["failure"]["completed_stages"]


# --- xq and sgae


def external_file(tmp_path, n, names, rng, with_phi=True):
    df = pd.DataFrame({"score": rng.random(n)})
    if with_phi:
        df["phi0"] = 0.0
        for f in names:
            df[f"phi_{f}"] = rng.normal(size=n)
    p = tmp_path / f"ext_{rng.integers(1 << 30)}.csv"
    df.to_csv(p, index=False)
    return p


def xq_config(out, **over):
    cfg = base_config(out, split={"kind": "stratified", "test_fraction": 0.25}, resampling={"method": "none"})
    cfg["xq"] = {"ks": [3, 5], "n_subsamples": 10, "subsample_size": 60, "top_n": 6, "n_boot": 100,
                 "explain_rows": 150}
    cfg.update(over)
    return cfg


def test_xq_tree_stable_and_minimal_kernel_less_so(tmp_path):
    out = tmp_path / "o"
    cfg = xq_config(out)
    gb = {"kind": "gbdt", "params": {"n_trees": 30, "max_depth": 4, "learning_rate": 0.2}}
    cfg["models"] = {"gb_tree": gb, "gb_kernel": gb}
    d = len(pd.read_csv(TOY, nrows=1).columns) - 4  # label, time, account, merchant are not features
    cfg["attribution"] = {"gb_tree": {"method": "tree", "background_size": 30},
                          "gb_kernel": {"method": "kernel", "background_size": 30, "n_coalitions": d + 2,
                                        "output": "margin"}}
    assert main(["xq", "--config", str(write_cfg(tmp_path, cfg))]) == 0
    stab = read(out / "stability.json")
    assert stab["gb_tree"]["stability_band"] == "high"
    assert stab["gb_kernel"]["kendall_w"] < stab["gb_tree"]["kendall_w"]
    attr = pd.read_csv(out / "attributions_gb_tree.csv")
    assert list(attr.columns[:3]) == ["row_id", "phi0", "fx"]
    assert np.allclose(attr["phi0"] + attr.filter(like="phi_").sum(axis=1), attr["fx"], atol=1e-9)
    faith = read(out / "faithfulness.json")
    assert [r["k"] for r in faith["gb_tree"]["by_k"]] == [3, 5]
    assert (out / "xq_summary.txt").exists()


def test_xq_identical_external_attributions_agree(tmp_path):
    rng = np.random.default_rng(0)
    names = pd.read_csv(TOY, nrows=1).drop(columns=["label", "time", "account", "merchant"]).columns
    f = external_file(tmp_path, 3000, names, rng)
    cfg = xq_config(tmp_path / "o")
    cfg["models"] = {"a": {"kind": "external", "path": str(f)}, "b": {"kind": "external", "path": str(f)}}
    cfg["attribution"] = {"a": {"method": "external"}, "b": {"method": "external"}}
    assert main(["xq", "--config", str(write_cfg(tmp_path, cfg))]) == 0
    agree = read(tmp_path / "o" / "agreement.json")
    assert agree["a__b"]["spearman_rho"] == 1.0
    # external scorers cannot be re-scored under masking, so no faithfulness rows
    assert read(tmp_path / "o" / "faithfulness.json") == {}


def test_xq_missing_external_attributions(tmp_path, capsys):
    rng = np.random.default_rng(1)
    f = external_file(tmp_path, 3000, [], rng, with_phi=False)
    cfg = xq_config(tmp_path / "o")
    cfg["models"]["ext"] = {"kind": "external", "path": str(f)}
    cfg["attribution"] = {"ext": {"method": "external"}, "gbdt": {"method": "tree"}}
    assert main(["xq", "--config", str(write_cfg(tmp_path, cfg))]) == 2
    man = read(tmp_path / "o" / "manifest.json")
    assert man["failure"]["error"] == "DependencyError"
    assert "stage: attribution" in man["failure"]["message"]


def sgae_config(out):
    cfg = xq_config(out)
    cfg["attribution"] = {"gbdt": {"method": "tree", "background_size": 30},
                          "logreg": {"method": "kernel", "background_size": 20, "n_coalitions": 64}}
    cfg["sgae"] = {"model_l": "logreg", "model_x": "gbdt", "K": 8, "n_boot": 100}
    return cfg


def test_sgae_toy_run(tmp_path):
    out = tmp_path / "o"
    assert main(["sgae", "--config", str(write_cfg(tmp_path, sgae_config(out)))]) == 0
    summary = read(out / "sgae_summary.json")
    dl = summary["delong_sgae_vs_static"]
    assert dl["method"] == "delong" and dl["p_value_str"] == f"{dl['p_value']:.4f}"
    assert "statistic" in dl
    rows = pd.read_csv(out / "sgae_rows.csv")
    assert list(rows.columns) == ["row_id", "fL", "fX", "A", "branch", "w", "p"]
    assert rows["w"].between(0.3, 0.7).all()
    assert (rows.loc[rows["A"] < 0, "w"] == 0.6).all()
    man = read(out / "manifest.json")
    # calibration rows never overlap the evaluation rows
    assert man["leakage"][0]["checks"]["validation"]["overlap_with_train"] == 0
    assert summary["calibration_rows"] > 0
    assert not set(rows["row_id"]) & set(range(-10**6, 0))


def test_sgae_identical_scorers(tmp_path):
    rng = np.random.default_rng(2)
    names = pd.read_csv(TOY, nrows=1).drop(columns=["label", "time", "account", "merchant"]).columns
    f = external_file(tmp_path, 3000, names, rng)
    g = tmp_path / "g.csv"
    df = pd.read_csv(f)
    df[[c for c in df.columns if c.startswith("phi_")]] = rng.normal(size=(3000, len(names)))
    df.to_csv(g, index=False)
    cfg = sgae_config(tmp_path / "o")
    cfg["models"] = {"l": {"kind": "external", "path": str(f)}, "x": {"kind": "external", "path": str(g)}}
    cfg["attribution"] = {"l": {"method": "external"}, "x": {"method": "external"}}
    cfg["sgae"].update(model_l="l", model_x="x")
    assert main(["sgae", "--config", str(write_cfg(tmp_path, cfg))]) == 0
    s = read(tmp_path / "o" / "sgae_summary.json")
    assert s["sgae"] == s["static"]


def test_dumps_is_canonical():
    assert dumps({"b": np.float64(1.5), "a": [np.int64(2), float("nan")]}) == \
        '{\n  "a": [\n    2,\n    null\n  ],\n  "b": 1.5\n}\n'


def test_validate_config_api_lists_all_problems():
    cfg = parse_config({"config_version": 1, "seed": 1, "data": {"path": "/nonexistent.csv"},
                        "split": {"kind": "weird"}})
    errs = validate_config(cfg)
    assert len(errs) >= 3
