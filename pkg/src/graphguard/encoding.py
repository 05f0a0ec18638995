"""Risk-based categorical encoding, z-score normalization and rolling splits."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .transactions import LABEL, TransactionTable

NORM_EPS = 1e-12
RISK_SUFFIX = "_risk"


def _as_frame(X) -> pd.DataFrame:
    if isinstance(X, TransactionTable):
        return X.frame
    if isinstance(X, pd.DataFrame):
        return X
    raise TypeError(f"expected a DataFrame or TransactionTable, got {type(X).__name__}")


class RiskEncoder(TransformerMixin, BaseEstimator):
    """Replace each category by the fraud ratio it had in the fitting data.

    Categories never seen during ``fit`` get ``default_risk`` (1.0), so
    values that only occur in the test period look maximally risky.
    Output columns are named ``<field>_risk``.
    """

    def __init__(self, fields=("category",), default_risk=1.0):
        self.fields = fields
        self.default_risk = default_risk

    def fit(self, X, y=None):
        frame = _as_frame(X)
        if len(frame) == 0:
            raise ValueError("cannot fit risk scores on an empty set")
        labels = np.asarray(frame[LABEL] if y is None else y, dtype=np.float64)
        self.risk_ = {}
        for f in self.fields:
            # mean of a 0/1 label per group == #fraud / #transactions
            ratios = pd.Series(labels, index=frame.index).groupby(frame[f].astype(str)).mean()
            self.risk_[f] = {str(k): float(v) for k, v in ratios.items()}
        return self

    def risk(self, field: str, value) -> float:
        check_is_fitted(self, "risk_")
        return self.risk_[field].get(str(value), float(self.default_risk))

    def transform(self, X):
        check_is_fitted(self, "risk_")
        frame = _as_frame(X).copy()
        for f in self.fields:
            table = self.risk_[f]
            frame[f + RISK_SUFFIX] = (frame[f].astype(str).map(table)
                                      .fillna(float(self.default_risk)).astype(np.float64))
        return frame

    def get_feature_names_out(self, input_features=None):
        return np.asarray([f + RISK_SUFFIX for f in self.fields], dtype=object)


class Normalizer(TransformerMixin, BaseEstimator):
    """Z-score scaling with the standard deviation floored at ``eps``.

    Uses the population standard deviation, so a fitted column maps to
    exactly mean 0 and standard deviation 1. Constant columns map to zeros.
    """

    def __init__(self, fields=("amount",), eps=NORM_EPS):
        self.fields = fields
        self.eps = eps

    def fit(self, X, y=None):
        frame = _as_frame(X)
        if len(frame) < 2:
            raise ValueError("normalizer needs at least 2 rows")
        self.mean_, self.scale_ = {}, {}
        for f in self.fields:
            col = frame[f].to_numpy(dtype=np.float64)
            mean = col.mean()
            std = np.sqrt(np.mean((col - mean) ** 2))
            if std <= self.eps:
                warnings.warn(f"column {f!r} is constant; it will be transformed to zeros",
                              RuntimeWarning, stacklevel=2)
            self.mean_[f] = float(mean)
            self.scale_[f] = float(max(std, self.eps))
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        frame = _as_frame(X).copy()
        for f in self.fields:
            col = frame[f].to_numpy(dtype=np.float64)
            out = (col - self.mean_[f]) / self.scale_[f]
            if self.scale_[f] <= self.eps:
                out = np.zeros_like(col)
            frame[f] = out
        return frame

    def get_feature_names_out(self, input_features=None):
        return np.asarray(list(self.fields), dtype=object)


def fit_risk(transactions, fields) -> RiskEncoder:
    return RiskEncoder(fields=tuple(fields)).fit(transactions)


def fit_normalizer(transactions, fields) -> Normalizer:
    return Normalizer(fields=tuple(fields)).fit(transactions)


def encode_table(table: TransactionTable, risk: RiskEncoder | None,
                 normalizer: Normalizer | None) -> TransactionTable:
    """Apply fitted encoders, returning a table whose numeric columns include the risks."""
    frame = table.frame
    numeric = list(table.numeric)
    if risk is not None:
        frame = risk.transform(frame)
        numeric += [f + RISK_SUFFIX for f in risk.fields if f + RISK_SUFFIX not in numeric]
    if normalizer is not None:
        frame = normalizer.transform(frame)
    return table.with_frame(frame, numeric)


def save_encoders(path: str | Path, risk: RiskEncoder | None, normalizer: Normalizer | None) -> None:
    """Write fitted encoders as tab-separated ``kind field key value`` lines.

    Keys are JSON-quoted strings, values use ``repr`` so floats round-trip.
    """
    lines = []
    if risk is not None:
        lines.append(f"risk_default\t-\t-\t{float(risk.default_risk)!r}")
        for f in risk.fields:
            lines.append(f"risk_field\t{f}\t-\t-")
            for k in sorted(risk.risk_[f]):
                lines.append(f"risk\t{f}\t{json.dumps(k)}\t{risk.risk_[f][k]!r}")
    if normalizer is not None:
        lines.append(f"norm_eps\t-\t-\t{float(normalizer.eps)!r}")
        for f in normalizer.fields:
            lines.append(f"norm\t{f}\t\"mean\"\t{normalizer.mean_[f]!r}")
            lines.append(f"norm\t{f}\t\"scale\"\t{normalizer.scale_[f]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_encoders(path: str | Path) -> tuple[RiskEncoder | None, Normalizer | None]:
    risk_fields, risk_table, default = [], {}, None
    norm_fields, mean, scale, eps = [], {}, {}, None
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{n}: expected 4 tab-separated fields")
        kind, field, key, value = parts
        if kind == "risk_default":
            default = float(value)
        elif kind == "risk_field":
            risk_fields.append(field)
            risk_table[field] = {}
        elif kind == "risk":
            risk_table[field][json.loads(key)] = float(value)
        elif kind == "norm_eps":
            eps = float(value)
        elif kind == "norm":
            if field not in norm_fields:
                norm_fields.append(field)
            (mean if json.loads(key) == "mean" else scale)[field] = float(value)
        else:
            raise ValueError(f"{path}:{n}: unknown record kind {kind!r}")
    risk = norm = None
    if default is not None:
        risk = RiskEncoder(fields=tuple(risk_fields), default_risk=default)
        risk.risk_ = risk_table
    if eps is not None:
        norm = Normalizer(fields=tuple(norm_fields), eps=eps)
        norm.mean_, norm.scale_ = mean, scale
    return risk, norm


@dataclass(frozen=True)
class Split:
    train_days: tuple[int, ...]
    val_days: tuple[int, ...]
    test_day: int

    @property
    def fit_days(self) -> tuple[int, ...]:
        """Days the encoders may see (everything but the test day)."""
        return self.train_days + self.val_days


@dataclass(frozen=True)
class SplitPlan:
    splits: tuple[Split, ...]
    eta: int
    n_val: int
    n_test_days: int

    def __len__(self):
        return len(self.splits)

    def __iter__(self):
        return iter(self.splits)

    def __getitem__(self, k):
        return self.splits[k]


def make_splits(n_days: int, eta: int, n_val: int = 1, n_test_days: int = 1) -> SplitPlan:
    """Rolling-window plan over the last ``n_test_days`` days.

    Split ``k`` tests on day ``n_days - n_test_days + k``, validates on the
    ``n_val`` days before it and trains on the ``eta`` days before those.
    """
    if eta < 1 or n_val < 0 or n_test_days < 1:
        raise ValueError("eta >= 1, n_val >= 0 and n_test_days >= 1 are required")
    needed = eta + n_val + n_test_days
    if n_days < needed:
        raise ValueError(f"need at least {needed} days (eta + n_val + n_test_days), got {n_days}")
    splits = []
    for k in range(n_test_days):
        test = n_days - n_test_days + k
        val = tuple(range(test - n_val, test))
        train = tuple(range(test - n_val - eta, test - n_val))
        splits.append(Split(train, val, test))
    return SplitPlan(tuple(splits), eta, n_val, n_test_days)
