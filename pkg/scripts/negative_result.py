"""SGAE fed with pure-noise attributions vs the static 50/50 blend.

With uninformative attributions the per-row agreement carries no signal, so the
adaptive weights should leave AUC inside the static blend's bootstrap interval.

    python3 scripts/negative_result.py --seeds 10
"""

import argparse

import numpy as np

from shapaudit.dataset import apply_normalizer, fit_normalizer, stratified_split
from shapaudit.models import GBDTConfig, LogisticConfig, train_gbdt, train_logistic
from shapaudit.sgae import run_sgae
from shapaudit.surrogate import make_transactions


def noise_explainer(seed, d):
    # keyed by row id, so a row gets the same noise whichever table it sits in
    return lambda t: np.vstack([np.random.default_rng([seed, int(r)]).normal(size=d) for r in t.row_ids])


def trial(seed, n_rows=6000, n_boot=1000):
    table = make_transactions(n=n_rows, n_features=12, fraud_rate=0.05, seed=seed)
    rest, test = stratified_split(table, 0.3, seed)
    train, val = stratified_split(rest, 0.25, seed + 1)
    # scale as the pipeline does: fit on the training rows only
    norm = fit_normalizer(train)
    train, val, test = (apply_normalizer(norm, t) for t in (train, val, test))
    lin = train_logistic(train, LogisticConfig(learning_rate=20.0, epochs=1000))
    gb = train_gbdt(train, GBDTConfig(n_trees=40, max_depth=3, seed=seed))
    d = table.n_features
    rep = run_sgae(val, test, lin, gb, noise_explainer(seed, d), noise_explainer(seed + 10_000, d),
                   n_boot=n_boot, seed=seed)
    s = rep.summary
    lo, hi = s["static_auc_ci95"]
    return {"seed": seed, "auc_sgae": s["sgae"]["auc_roc"], "auc_static": s["static"]["auc_roc"],
            "ci_low": lo, "ci_high": hi, "mean_w": float(np.mean(rep.w)),
            "delong_p": s["delong_sgae_vs_static"]["p_value"]}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--rows", type=int, default=6000)
    args = ap.parse_args()
    inside = 0
    for seed in range(args.seeds):
        r = trial(seed, args.rows)
        ok = r["ci_low"] <= r["auc_sgae"] <= r["ci_high"]
        inside += ok
        print(f"seed {seed}: AUC sgae {r['auc_sgae']:.4f}  static {r['auc_static']:.4f} "
              f"[{r['ci_low']:.4f}, {r['ci_high']:.4f}]  mean w {r['mean_w']:.3f}  "
              f"DeLong p {r['delong_p']:.3f}  {'inside' if ok else 'OUTSIDE'}")
    print(f"{inside}/{args.seeds} inside the static 95% CI")


if __name__ == "__main__":
    main()
