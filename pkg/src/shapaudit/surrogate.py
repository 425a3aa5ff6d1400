"""Synthetic card-transaction surrogate with the column roles of the public
fraud benchmark (time in seconds, card/account key, amount, merchant key, two
location proxies) and a known generating process.

Fraud log-odds combine graded linear effects, one interaction, a threshold
effect on amount and a burst effect (many transactions on the account within a
day), so boosted trees beat a linear model and velocity features carry signal.
"""

from __future__ import annotations

import numpy as np

from .dataset import DAY, DataTable


def make_transactions(n: int = 20_000, n_features: int = 28, fraud_rate: float = 0.04, n_accounts: int | None = None,
                      seed: int = 0, decay: float = 0.8) -> DataTable:
    rng = np.random.default_rng(seed)
    n_accounts = n_accounts or max(2, n // 12)
    account = rng.integers(0, n_accounts, size=n)
    time = np.sort(rng.uniform(0.0, 180 * DAY, size=n))
    account = account[rng.permutation(n)]
    amount = np.round(np.exp(rng.normal(3.5, 1.0, size=n)), 2)
    merchant = rng.integers(0, 400, size=n)
    home = rng.normal(0.0, 50.0, size=(n_accounts, 2))
    loc = home[account] + rng.normal(0.0, 5.0, size=(n, 2))

    Z = rng.normal(size=(n, n_features))
    beta = 1.6 * decay ** np.arange(n_features)
    logit = Z @ beta * 0.6
    logit += 0.8 * Z[:, 0] * Z[:, 1]
    logit += 1.2 * (amount > 150)
    # bursts: accounts active again within an hour look riskier
    gap = np.full(n, np.inf)
    order = np.lexsort((time, account))
    same = account[order][1:] == account[order][:-1]
    dt = np.diff(time[order])
    gap[order[1:][same]] = dt[same]
    logit += 1.0 * (gap < 3600)
    # far-from-home transactions
    far = np.linalg.norm(loc - home[account], axis=1)
    logit += 0.15 * far

    intercept = _intercept_for_rate(logit, fraud_rate)
    p = 1.0 / (1.0 + np.exp(-(logit + intercept)))
    y = (rng.random(n) < p).astype(np.int64)

    X = np.column_stack([amount, Z, loc])
    names = ("amount", *(f"v{j:02d}" for j in range(n_features)), "loc_x", "loc_y")
    return DataTable(X=X, y=y, feature_names=names, time=time, account=account.astype(object),
                     aux={"merchant": merchant.astype(float)})


def _intercept_for_rate(logit, rate):
    lo, hi = -30.0, 30.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.mean(1.0 / (1.0 + np.exp(-(logit + mid)))) > rate:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def additive_model_data(n: int = 2000, n_informative: int = 5, n_dummy: int = 5, seed: int = 0):
    """Rows for a known additive model: feature j < n_informative has weight
    (n_informative - j); the rest are ignored by the model."""
    rng = np.random.default_rng(seed)
    d = n_informative + n_dummy
    X = rng.normal(size=(n, d))
    coef = np.r_[np.arange(n_informative, 0, -1, dtype=float), np.zeros(n_dummy)]
    margin = X @ coef
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-margin))).astype(np.int64)
    table = DataTable(X=X, y=y, feature_names=tuple(f"x{j}" for j in range(d)))
    return table, coef
