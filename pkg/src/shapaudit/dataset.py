"""Tabular ingestion and leakage-safe partitioning.

A :class:`DataTable` carries the feature matrix plus the columns that must never
be fed to a model (label, time, account, auxiliary columns such as a merchant
key). Every row keeps a ``row_id`` pointing back at its position in the source
file; synthetic rows created by resampling get negative ids so they can never be
confused with real observations.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .errors import (
    ConfigurationError,
    ParseError,
    ResamplingError,
    SchemaError,
    ShapeError,
    StratificationError,
)

log = logging.getLogger(__name__)

DAY = 86400.0


@dataclass(frozen=True)
class DataTable:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    time: np.ndarray | None = None
    account: np.ndarray | None = None
    aux: dict = field(default_factory=dict)
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ShapeError("X must be 2-D")
        y = np.asarray(self.y).astype(np.int64).ravel()
        names = tuple(self.feature_names)
        if X.shape[0] < 1:
            raise ShapeError("a DataTable needs at least one row")
        if X.shape[1] != len(names):
            raise ShapeError(f"{X.shape[1]} feature columns but {len(names)} feature names")
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if y.shape[0] != X.shape[0]:
            raise ShapeError("labels are not row-aligned with X")
        if not np.isin(y, (0, 1)).all():
            raise SchemaError("labels must be 0/1")
        if not np.isfinite(X).all():
            raise ParseError("feature matrix contains non-finite values")
        n = X.shape[0]
        for name in ("time", "account"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col)
                if col.shape[0] != n:
                    raise ShapeError(f"{name} column is not row-aligned")
                object.__setattr__(self, name, col)
        aux = {k: np.asarray(v) for k, v in self.aux.items()}
        for k, v in aux.items():
            if v.shape[0] != n:
                raise ShapeError(f"aux column {k!r} is not row-aligned")
        ids = np.arange(n, dtype=np.int64) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        if ids.shape != (n,):
            raise ShapeError("row_ids are not row-aligned")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "aux", aux)
        object.__setattr__(self, "row_ids", ids)

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> DataTable:
        idx = np.asarray(idx)
        return replace(
            self,
            X=self.X[idx],
            y=self.y[idx],
            time=None if self.time is None else self.time[idx],
            account=None if self.account is None else self.account[idx],
            aux={k: v[idx] for k, v in self.aux.items()},
            row_ids=self.row_ids[idx],
        )

    def with_features(self, X, feature_names=None) -> DataTable:
        return replace(self, X=X, feature_names=self.feature_names if feature_names is None else feature_names)

    def column(self, name: str) -> np.ndarray:
        """Look a column up among features, then time/account, then aux."""
        if name in self.feature_names:
            return self.X[:, self.feature_names.index(name)]
        if name in self.aux:
            return self.aux[name]
        raise ConfigurationError(f"column {name!r} is not present in the table")

    def fingerprint(self) -> str:
        """SHA-256 over row ids, labels and feature bytes (used for leakage checks)."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.row_ids).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update("\x1f".join(self.feature_names).encode())
        return h.hexdigest()


def concat(tables: list[DataTable]) -> DataTable:
    first = tables[0]
    return replace(
        first,
        X=np.vstack([t.X for t in tables]),
        y=np.concatenate([t.y for t in tables]),
        time=None if first.time is None else np.concatenate([t.time for t in tables]),
        account=None if first.account is None else np.concatenate([t.account for t in tables]),
        aux={k: np.concatenate([t.aux[k] for t in tables]) for k in first.aux},
        row_ids=np.concatenate([t.row_ids for t in tables]),
    )


# ---------------------------------------------------------------------------
# ingestion


def load_table(path, schema: dict) -> DataTable:
    """Read a headed UTF-8 CSV into a DataTable.

    ``schema`` keys: ``label`` (required), ``time``, ``account``, ``features``
    (default: every other column), ``aux`` (non-feature columns to carry along)
    and ``fill_missing`` (value for empty feature cells; empty cells are a parse
    error when absent).
    """
    if "label" not in schema:
        raise SchemaError("schema must name a label column")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    columns = list(df.columns)
    label = schema["label"]
    roles = {"label": label, "time": schema.get("time"), "account": schema.get("account")}
    aux_cols = list(schema.get("aux") or [])
    for role, col in roles.items():
        if col is not None and col not in columns:
            raise SchemaError(f"declared {role} column {col!r} not found in {path}")
    for col in aux_cols:
        if col not in columns:
            raise SchemaError(f"declared aux column {col!r} not found in {path}")
    reserved = {c for c in roles.values() if c is not None}
    if schema.get("features") is None:
        features = [c for c in columns if c not in reserved and c not in aux_cols]
    else:
        features = list(schema["features"])
        missing = [c for c in features if c not in columns]
        if missing:
            raise SchemaError(f"declared feature columns missing from {path}: {missing}")
    fill = schema.get("fill_missing")

    X = np.empty((len(df), len(features)))
    for j, col in enumerate(features):
        raw = df[col].str.strip()
        if fill is not None:
            raw = raw.where(raw != "", str(fill))
        num = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(num)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ParseError(
                f"non-numeric value {df[col].iloc[i]!r} in feature {col!r} at row {i + 1}",
                row=i + 1,
                column=col,
            )
        X[:, j] = num

    y_num = pd.to_numeric(df[label], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isin(y_num, (0.0, 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"label {df[label].iloc[i]!r} at row {i + 1} is not 0/1", row=i + 1, column=label)

    time = None
    if roles["time"] is not None:
        time = pd.to_numeric(df[roles["time"]], errors="coerce").to_numpy(dtype=float)
        if not np.isfinite(time).all():
            i = int(np.flatnonzero(~np.isfinite(time))[0])
            raise ParseError(f"time value at row {i + 1} is not numeric", row=i + 1, column=roles["time"])
    account = None if roles["account"] is None else df[roles["account"]].to_numpy(dtype=object)
    aux = {}
    for col in aux_cols:
        as_num = pd.to_numeric(df[col], errors="coerce")
        aux[col] = as_num.to_numpy(dtype=float) if as_num.notna().all() else df[col].to_numpy(dtype=object)
    return DataTable(X=X, y=y_num.astype(np.int64), feature_names=tuple(features), time=time,
                     account=account, aux=aux)


def write_table(table: DataTable, path, label: str = "label", time: str = "time",
                account: str = "account") -> None:
    """Inverse of :func:`load_table` for tables with default role names."""
    df = pd.DataFrame(table.X, columns=list(table.feature_names))
    for k, v in table.aux.items():
        df[k] = v
    if table.time is not None:
        df[time] = table.time
    if table.account is not None:
        df[account] = table.account
    df[label] = table.y
    df.to_csv(path, index=False, float_format="%.10g")


# ---------------------------------------------------------------------------
# splitting


def _class_indices(table: DataTable, rng):
    out = []
    for c in (1, 0):
        idx = np.flatnonzero(table.y == c)
        out.append(idx[rng.permutation(idx.size)])
    return out


def stratified_split(table: DataTable, test_fraction: float, seed: int) -> tuple[DataTable, DataTable]:
    """Hold out ``test_fraction`` of each class (rounded per class)."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must lie in (0, 1)")
    if np.unique(table.y).size < 2:
        raise StratificationError("stratified split needs both classes present")
    rng = np.random.default_rng(seed)
    test_idx = []
    for idx in _class_indices(table, rng):
        n_test = int(round(test_fraction * idx.size))
        test_idx.append(idx[:n_test])
    test_idx = np.sort(np.concatenate(test_idx))
    train_mask = np.ones(len(table), dtype=bool)
    train_mask[test_idx] = False
    return table.take(np.flatnonzero(train_mask)), table.take(test_idx)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def train_test(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        return np.flatnonzero(self.assignments != fold), np.flatnonzero(self.assignments == fold)

    def folds(self):
        for f in range(self.k):
            yield (f, *self.train_test(f))


def stratified_kfold(table: DataTable, k: int, seed: int) -> FoldPlan:
    """Deal shuffled positives then shuffled negatives round-robin into k folds.

    Continuing the deal across classes keeps total fold sizes within one row of
    each other as well as the per-class counts.
    """
    if k < 2:
        raise ConfigurationError("k must be at least 2")
    for c in (0, 1):
        count = int(np.sum(table.y == c))
        if count < k:
            raise StratificationError(f"class {c} has {count} members, fewer than k={k}")
    rng = np.random.default_rng(seed)
    order = np.concatenate(_class_indices(table, rng))
    assignments = np.empty(len(table), dtype=np.int64)
    assignments[order] = np.arange(order.size) % k
    return FoldPlan(k=k, assignments=assignments, seed=seed)


def chronological_split(table: DataTable, train_quantile: float) -> tuple[DataTable, DataTable]:
    """Earliest floor(q*n) rows train, the rest test; rows sharing the boundary
    timestamp all stay on the train side."""
    if table.time is None:
        raise ConfigurationError("chronological split needs a time column")
    if not 0.0 < train_quantile < 1.0:
        raise ConfigurationError("train_quantile must lie in (0, 1)")
    n = len(table)
    order = np.argsort(table.time, kind="stable")
    n_train = int(np.floor(train_quantile * n))
    if n_train == 0:
        raise ConfigurationError("train_quantile leaves no training rows")
    boundary = table.time[order[n_train - 1]]
    t_sorted = table.time[order]
    n_train = int(np.searchsorted(t_sorted, boundary, side="right"))
    if n_train >= n:
        raise ConfigurationError("every row ties with the boundary timestamp; no test rows remain")
    return table.take(order[:n_train]), table.take(order[n_train:])


# ---------------------------------------------------------------------------
# normalisation


@dataclass(frozen=True)
class Normalizer:
    minimum: np.ndarray
    maximum: np.ndarray

    def apply(self, table: DataTable) -> DataTable:
        return apply_normalizer(self, table)


def fit_normalizer(train: DataTable) -> Normalizer:
    lo = train.X.min(axis=0)
    hi = train.X.max(axis=0)
    const = np.flatnonzero(hi <= lo)
    if const.size:
        names = [train.feature_names[j] for j in const]
        warnings.warn(f"constant features map to 0.0: {names}", RuntimeWarning, stacklevel=2)
    return Normalizer(minimum=lo, maximum=hi)


def apply_normalizer(normalizer: Normalizer, table: DataTable) -> DataTable:
    """Min-max scale with the training range. Out-of-range values are not clipped."""
    span = normalizer.maximum - normalizer.minimum
    if span.shape[0] != table.n_features:
        raise ShapeError("normalizer width does not match the table")
    safe = np.where(span > 0, span, 1.0)
    Z = np.where(span > 0, (table.X - normalizer.minimum) / safe, 0.0)
    return table.with_features(Z)


# ---------------------------------------------------------------------------
# resampling


def _tomek_majority(X, y, majority):
    """Indices of majority-class members of Tomek links (mutual nearest neighbours
    of opposite class)."""
    if X.shape[0] < 2:
        return np.empty(0, dtype=np.int64)
    tree = cKDTree(X)
    _, nn = tree.query(X, k=2)
    nn = nn[:, 1]
    i = np.arange(X.shape[0])
    linked = (nn[nn] == i) & (y != y[nn])
    return np.flatnonzero(linked & (y == majority))


def smote_tomek(train: DataTable, k_neighbors: int = 5, seed: int = 0) -> DataTable:
    """Oversample the minority class to parity with SMOTE, then drop the majority
    member of every Tomek link.

    Synthetic rows copy time/account/aux from the minority row they were grown
    from and receive negative row ids (-1, -2, ...).
    """
    if k_neighbors < 1:
        raise ConfigurationError("k_neighbors must be positive")
    counts = np.bincount(train.y, minlength=2)
    minority = int(np.argmin(counts)) if counts[0] != counts[1] else 1
    majority = 1 - minority
    n_min = int(counts[minority])
    if n_min < k_neighbors + 1:
        raise ResamplingError(f"minority class has {n_min} rows; SMOTE with k={k_neighbors} needs {k_neighbors + 1}")
    rng = np.random.default_rng(seed)
    n_new = int(counts[majority] - counts[minority])
    table = train
    if n_new > 0:
        min_idx = np.flatnonzero(train.y == minority)
        Xm = train.X[min_idx]
        _, nn = cKDTree(Xm).query(Xm, k=k_neighbors + 1)
        nn = nn[:, 1:]
        base = rng.integers(0, n_min, size=n_new)
        pick = nn[base, rng.integers(0, k_neighbors, size=n_new)]
        lam = rng.random(n_new)[:, None]
        X_new = Xm[base] + lam * (Xm[pick] - Xm[base])
        src = min_idx[base]
        synth = train.take(src)
        synth = replace(synth, X=X_new, y=np.full(n_new, minority), row_ids=-np.arange(1, n_new + 1))
        table = concat([train, synth])
    drop = _tomek_majority(table.X, table.y, majority)
    if drop.size:
        keep = np.ones(len(table), dtype=bool)
        keep[drop] = False
        table = table.take(np.flatnonzero(keep))
    log.debug("smote_tomek: %d synthetic rows, %d Tomek removals", n_new, drop.size)
    return table


# ---------------------------------------------------------------------------
# behavioural velocity features

VELOCITY_NAMES = (
    "vel_time_since_last",
    "vel_amount_to_7d_mean",
    "vel_count_24h",
    "vel_unique_merchants_7d",
    "vel_distance_from_prev",
)


def velocity_features(table: DataTable, mapping: dict, day: float = DAY) -> DataTable:
    """Append per-account velocity features computed from strictly earlier rows.

    ``mapping`` names the ``amount``, ``merchant`` and optional ``location``
    (pair of columns) roles; time and account come from the table itself unless
    ``mapping`` overrides them with aux column names. First-in-account rows get
    the neutral values 0, 1.0, 0, 0, 0.
    """
    for role in ("amount", "merchant"):
        if role not in mapping:
            raise ConfigurationError(f"velocity mapping lacks the {role!r} role")
    time = table.column(mapping["time"]) if mapping.get("time") else table.time
    account = table.column(mapping["account"]) if mapping.get("account") else table.account
    if time is None or account is None:
        raise ConfigurationError("velocity features need time and account columns")
    amount = np.asarray(table.column(mapping["amount"]), dtype=float)
    merchant = np.asarray(table.column(mapping["merchant"]))
    loc = mapping.get("location")
    if loc:
        if len(loc) != 2:
            raise ConfigurationError("location must name exactly two columns")
        location = np.column_stack([np.asarray(table.column(c), dtype=float) for c in loc])
    else:
        warnings.warn("no location columns mapped; distance feature skipped", RuntimeWarning, stacklevel=2)
        location = None
    time = np.asarray(time, dtype=float)

    n = len(table)
    out = np.zeros((n, 5))
    out[:, 1] = 1.0
    acc_codes = pd.factorize(pd.Series(account, dtype=object))[0]
    order = np.lexsort((np.arange(n), time, acc_codes))
    bounds = np.flatnonzero(np.diff(acc_codes[order])) + 1
    for grp in np.split(order, bounds):
        t = time[grp]
        a = amount[grp]
        m = merchant[grp]
        for pos, row in enumerate(grp):
            # rows strictly earlier than t[pos]
            end = int(np.searchsorted(t, t[pos], side="left"))
            if end == 0:
                continue
            prev = grp[end - 1]
            out[row, 0] = t[pos] - t[end - 1]
            lo7 = int(np.searchsorted(t, t[pos] - 7 * day, side="left"))
            if end > lo7:
                mean7 = a[lo7:end].mean()
                out[row, 1] = a[pos] / mean7 if mean7 != 0 else 1.0
                out[row, 3] = len(set(m[lo7:end].tolist()))
            lo24 = int(np.searchsorted(t, t[pos] - day, side="left"))
            out[row, 2] = end - lo24
            if location is not None:
                out[row, 4] = float(np.linalg.norm(location[row] - location[prev]))
    names = VELOCITY_NAMES if location is not None else VELOCITY_NAMES[:4]
    cols = out if location is not None else out[:, :4]
    return table.with_features(np.hstack([table.X, cols]), table.feature_names + names)
