"""Experiment configuration: a single YAML (or JSON) file, versioned, hashed.

Top-level keys::

    config_version: 1
    seed: 7                      # master seed; every stage seed derives from it
    data:        {path | surrogate, schema, velocity}
    split:       {kind: kfold|stratified|chronological, k, test_fraction, quantile, validation_fraction}
    resampling:  {method: smote_tomek|none, scope: train|full, k_neighbors}
    normalize:   true
    models:      {name: {kind: logistic|gbdt|external, params | path}}
    attribution: {model name: {method: tree|kernel|exact|external, background_size, n_coalitions, output}}
    xq:          {ks, n_subsamples, subsample_size, top_n, n_boot, pairs, strategy, per_instance, explain_rows}
    sgae:        {model_l, model_x, K, tau_a, w_min, w_max, topk_mode, calibration, n_boot}
    output:      {dir}

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import copy
import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError

CONFIG_VERSION = 1

DEFAULTS = {
    "split": {"kind": "stratified", "k": 5, "test_fraction": 0.2, "quantile": 0.75, "validation_fraction": 0.2},
    "resampling": {"method": "none", "scope": "train", "k_neighbors": 5},
    "normalize": True,
    "models": {},
    "attribution": {},
    "xq": {"ks": [5, 10, 15], "n_subsamples": 30, "subsample_size": 200, "top_n": 30, "n_boot": 1000,
           "pairs": [], "strategy": "mean", "per_instance": False, "explain_rows": None},
    "sgae": None,
    "output": {"dir": "out"},
}

SGAE_DEFAULTS = {"K": 10, "tau_a": 0.60, "w_min": 0.30, "w_max": 0.70, "topk_mode": "per_transaction",
                 "calibration": "validation", "n_boot": 1000}
ATTRIBUTION_DEFAULTS = {"background_size": 100, "n_coalitions": 1000, "output": None}

TOP_KEYS = {"config_version", "seed", "data", "split", "resampling", "normalize", "models", "attribution", "xq",
            "sgae", "output"}


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    source: Path | None = None
    overrides: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def config_hash(self) -> str:
        # where outputs land does not change what is computed
        content = {k: v for k, v in self.raw.items() if k != "output"}
        blob = json.dumps(content, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.raw["output"]["dir"])

    def stage_seed(self, *names) -> int:
        """Deterministic sub-seed for a named stage."""
        tags = [zlib.crc32(str(n).encode()) for n in names]
        return int(np.random.SeedSequence([self.seed, *tags]).generate_state(1)[0])


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in (given or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(raw: dict, base_dir=".", source=None, seed: int | None = None,
                 out_dir: str | None = None) -> ExperimentConfig:
    """Fill defaults and apply CLI overrides. Structural checks live in
    :func:`validate_config`; this only fails on unreadable shapes."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping at top level")
    cfg = {}
    for key, default in DEFAULTS.items():
        given = raw.get(key)
        if isinstance(default, dict):
            cfg[key] = _merge(default, given)
        else:
            cfg[key] = default if given is None else copy.deepcopy(given)
    for key in ("config_version", "seed", "data"):
        if key in raw:
            cfg[key] = copy.deepcopy(raw[key])
    for key in raw:
        if key not in TOP_KEYS:
            cfg.setdefault("_unknown", []).append(key)
    if cfg.get("sgae") is not None:
        cfg["sgae"] = _merge(SGAE_DEFAULTS, cfg["sgae"])
    cfg["attribution"] = {k: _merge(ATTRIBUTION_DEFAULTS, v) for k, v in (cfg.get("attribution") or {}).items()}
    overrides = {}
    if seed is not None:
        cfg["seed"] = int(seed)
        overrides["seed"] = int(seed)
    if out_dir is not None:
        cfg["output"]["dir"] = str(out_dir)
        overrides["output.dir"] = str(out_dir)
    return ExperimentConfig(raw=cfg, base_dir=Path(base_dir), source=source, overrides=overrides)


def load_config(path, seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return parse_config(raw, base_dir=path.parent, source=path, seed=seed, out_dir=out_dir)


MODEL_KINDS = ("logistic", "gbdt", "external")
ATTRIBUTION_METHODS = ("tree", "kernel", "exact", "external")
SPLIT_KINDS = ("kfold", "stratified", "chronological")


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Every problem found, as human-readable lines (empty list = valid)."""
    raw = cfg.raw
    errs = []
    if raw.get("_unknown"):
        errs.append(f"unknown top-level keys: {sorted(raw['_unknown'])}")
    if raw.get("config_version") != CONFIG_VERSION:
        errs.append(f"config_version must be {CONFIG_VERSION} (got {raw.get('config_version')!r})")
    if not isinstance(raw.get("seed"), int) or isinstance(raw.get("seed"), bool):
        errs.append("seed must be an explicit integer; wall-clock seeding is not allowed")

    data = raw.get("data")
    schema = {}
    if not isinstance(data, dict):
        errs.append("data section is required")
    else:
        if "surrogate" in data:
            if not isinstance(data["surrogate"], dict):
                errs.append("data.surrogate must be a mapping")
        elif "path" not in data:
            errs.append("data needs a path (or a surrogate block)")
        elif not cfg.resolve(data["path"]).exists():
            errs.append(f"data file {cfg.resolve(data['path'])} does not exist")
        schema = data.get("schema") or {}
        if "path" in data and "label" not in schema:
            errs.append("data.schema.label is required")

    split = raw["split"]
    if split.get("kind") not in SPLIT_KINDS:
        errs.append(f"split.kind must be one of {SPLIT_KINDS}")
    if split.get("kind") == "kfold" and (not isinstance(split.get("k"), int) or split["k"] < 2):
        errs.append("split.k must be an integer >= 2")
    for key in ("test_fraction", "quantile", "validation_fraction"):
        v = split.get(key)
        if not isinstance(v, (int, float)) or not 0 < v < 1:
            errs.append(f"split.{key} must lie in (0, 1)")
    if split.get("kind") == "chronological" and isinstance(data, dict) and "path" in data and not schema.get("time"):
        errs.append("chronological split needs data.schema.time")

    res = raw["resampling"]
    if res.get("method") not in ("smote_tomek", "none"):
        errs.append("resampling.method must be 'smote_tomek' or 'none'")
    if res.get("method") == "smote_tomek" and res.get("scope") != "train":
        errs.append("leakage: within-folds rule violated; SMOTE-Tomek may only resample the training rows of each fold "
                    f"(or of the holdout training partition), but scope {res.get('scope')!r} would place "
                    "synthetic rows in evaluation data and in the SHAP background")
    if not isinstance(res.get("k_neighbors"), int) or res["k_neighbors"] < 1:
        errs.append("resampling.k_neighbors must be a positive integer")

    models = raw.get("models") or {}
    for name, spec in models.items():
        kind = (spec or {}).get("kind")
        if kind not in MODEL_KINDS:
            errs.append(f"models.{name}.kind must be one of {MODEL_KINDS}")
        if kind == "external":
            if "path" not in spec:
                errs.append(f"models.{name}: external model needs a path")
            elif not cfg.resolve(spec["path"]).exists():
                errs.append(f"models.{name}: score file {cfg.resolve(spec['path'])} does not exist")
    for name, spec in (raw.get("attribution") or {}).items():
        if name not in models:
            errs.append(f"attribution.{name} refers to an unknown model")
            continue
        method = spec.get("method")
        if method not in ATTRIBUTION_METHODS:
            errs.append(f"attribution.{name}.method must be one of {ATTRIBUTION_METHODS}")
        kind = models[name].get("kind")
        if method == "tree" and kind != "gbdt":
            errs.append(f"attribution.{name}: tree attribution needs a gbdt model")
        if method == "external" and kind != "external":
            errs.append(f"attribution.{name}: external attributions need an external model")
        if method != "external" and kind == "external":
            errs.append(f"attribution.{name}: an external model can only carry external attributions")

    xq = raw["xq"]
    for a, b in xq.get("pairs") or []:
        for n in (a, b):
            if n not in raw.get("attribution", {}):
                errs.append(f"xq pair member {n!r} has no attribution configured")
    if xq.get("strategy") not in ("mean", "resample"):
        errs.append("xq.strategy must be 'mean' or 'resample'")

    sg = raw.get("sgae")
    if sg is not None:
        for role in ("model_l", "model_x"):
            if sg.get(role) not in models:
                errs.append(f"sgae.{role} must name a configured model")
            elif sg.get(role) not in raw.get("attribution", {}):
                errs.append(f"sgae.{role} has no attribution configured")
        if sg.get("calibration") == "test":
            errs.append("leakage: sgae calibration must use the validation partition, never the test set")
        elif sg.get("calibration") != "validation":
            errs.append("sgae.calibration must be 'validation'")
        if not sg.get("w_min", 0) <= 0.5 <= sg.get("w_max", 1):
            errs.append("sgae needs w_min <= 0.5 <= w_max")
        if not sg.get("w_min", 0) <= sg.get("tau_a", 0.6) <= sg.get("w_max", 1):
            errs.append("sgae.tau_a must lie in [w_min, w_max]")
        if not isinstance(sg.get("K"), int) or sg["K"] < 2:
            errs.append("sgae.K must be an integer >= 2")
    return errs
