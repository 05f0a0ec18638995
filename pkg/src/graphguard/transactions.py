"""Transaction records, delimited-file ingestion, daily batches and windows."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

SECONDS_PER_DAY = 86_400

# canonical column names used inside a TransactionTable
TX_ID = "tx_id"
TIME = "time"
DAY = "day"
CARD = "card_id"
MERCHANT = "merchant_id"
LABEL = "label"


class SchemaError(ValueError):
    """Raised when an input file does not match the configured columns."""


class IngestError(ValueError):
    """Raised for unparseable or empty input."""


@dataclass(frozen=True)
class Transaction:
    tx_id: int
    time: int
    day: int
    card_id: str
    merchant_id: str
    label: int
    categorical: dict[str, str] = field(default_factory=dict)
    numeric: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Schema:
    """Maps file columns onto the logical transaction fields.

    ``tx_id`` may be ``None``, in which case ids are the 0-based row order
    of the file.
    """

    time: str = "time"
    card_id: str = "card_id"
    merchant_id: str = "merchant_id"
    label: str = "label"
    tx_id: str | None = "tx_id"
    categorical: tuple[str, ...] = ()
    numeric: tuple[str, ...] = ()
    delimiter: str = ","

    def required(self) -> list[str]:
        cols = [self.time, self.card_id, self.merchant_id, self.label]
        if self.tx_id is not None:
            cols.append(self.tx_id)
        return cols + list(self.categorical) + list(self.numeric)


@dataclass(frozen=True)
class DayWindow:
    t: int
    eta: int
    theta: int

    def __post_init__(self):
        if self.eta < 1 or self.theta < 1:
            raise ValueError("eta and theta must be >= 1")


class TransactionTable:
    """Immutable, time-ordered collection of transactions.

    Backed by a DataFrame with the canonical columns plus the declared
    categorical and numeric columns. Rows are sorted by ``(time, tx_id)``.
    """

    def __init__(self, frame: pd.DataFrame, categorical: Sequence[str] = (),
                 numeric: Sequence[str] = ()):
        self.categorical = tuple(categorical)
        self.numeric = tuple(numeric)
        frame = frame.sort_values([TIME, TX_ID], kind="mergesort").reset_index(drop=True)
        if frame[TX_ID].duplicated().any():
            raise IngestError("tx_id values must be unique")
        self._frame = frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, categorical: Sequence[str] = (),
                   numeric: Sequence[str] = ()) -> "TransactionTable":
        """Build a table from canonical columns, assigning day indices."""
        frame = frame.copy()
        frame[TX_ID] = frame[TX_ID].astype(np.int64)
        frame[TIME] = frame[TIME].astype(np.int64)
        frame[LABEL] = frame[LABEL].astype(np.int64)
        for col in (CARD, MERCHANT, *categorical):
            frame[col] = frame[col].astype(str)
        for col in numeric:
            frame[col] = frame[col].astype(np.float64)
        if len(frame):
            if (frame[TIME] < 0).any():
                raise IngestError("time must be >= 0")
            if not frame[LABEL].isin([0, 1]).all():
                raise IngestError("label must be 0 or 1")
            frame[DAY] = (frame[TIME] - frame[TIME].min()) // SECONDS_PER_DAY
        else:
            frame[DAY] = pd.Series(dtype=np.int64)
        cols = [TX_ID, TIME, DAY, CARD, MERCHANT, LABEL, *categorical, *numeric]
        return cls(frame[cols], categorical, numeric)

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    def __len__(self) -> int:
        return len(self._frame)

    def __iter__(self) -> Iterator[Transaction]:
        return self.rows()

    def rows(self) -> Iterator[Transaction]:
        f = self._frame
        for rec in f.to_dict("records"):
            yield Transaction(
                tx_id=int(rec[TX_ID]), time=int(rec[TIME]), day=int(rec[DAY]),
                card_id=rec[CARD], merchant_id=rec[MERCHANT], label=int(rec[LABEL]),
                categorical={c: rec[c] for c in self.categorical},
                numeric={c: float(rec[c]) for c in self.numeric},
            )

    @property
    def days(self) -> np.ndarray:
        return self._frame[DAY].to_numpy()

    @property
    def n_days(self) -> int:
        """Number of day buckets from the first to the last transaction."""
        return int(self._frame[DAY].max()) + 1 if len(self) else 0

    def subset(self, mask) -> "TransactionTable":
        # rows stay sorted, so skip the constructor's sort/uniqueness pass
        out = object.__new__(TransactionTable)
        out.categorical = self.categorical
        out.numeric = self.numeric
        out._frame = self._frame.loc[np.asarray(mask)].reset_index(drop=True)
        return out

    def with_frame(self, frame: pd.DataFrame, numeric: Sequence[str]) -> "TransactionTable":
        """Same rows with replaced/added numeric columns (e.g. after encoding)."""
        out = object.__new__(TransactionTable)
        out.categorical = self.categorical
        out.numeric = tuple(numeric)
        out._frame = frame
        return out

    def write(self, path: str | Path, delimiter: str = ",") -> None:
        cols = [TX_ID, TIME, CARD, MERCHANT, LABEL, *self.categorical, *self.numeric]
        self._frame[cols].to_csv(path, sep=delimiter, index=False)

    def __repr__(self) -> str:
        return f"TransactionTable(n={len(self)}, days={self.n_days})"


def ingest_table(path: str | Path, schema: Schema | None = None) -> TransactionTable:
    """Read a delimited file with a header row into a sorted table."""
    schema = schema or Schema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        raw = pd.read_csv(path, sep=schema.delimiter, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise IngestError(f"{path}: empty file") from None
    if raw.empty:
        raise IngestError(f"{path}: no data rows")
    missing = [c for c in schema.required() if c not in raw.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")

    def _numeric(col: str, integer: bool) -> pd.Series:
        vals = pd.to_numeric(raw[col].str.strip(), errors="coerce")
        bad = vals.isna()
        if integer:
            bad |= vals.notna() & (vals != np.floor(vals))
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise IngestError(f"{path}: data row {i + 1} (line {i + 2}): bad value "
                              f"{raw[col].iloc[i]!r} in column {col!r}")
        return vals

    frame = pd.DataFrame({
        TX_ID: (_numeric(schema.tx_id, True) if schema.tx_id is not None
                else pd.Series(np.arange(len(raw)))),
        TIME: _numeric(schema.time, True),
        CARD: raw[schema.card_id],
        MERCHANT: raw[schema.merchant_id],
        LABEL: _numeric(schema.label, True),
    })
    for c in schema.categorical:
        frame[c] = raw[c]
    for c in schema.numeric:
        frame[c] = _numeric(c, False)
    bad_label = ~frame[LABEL].isin([0, 1])
    if bad_label.any():
        i = int(np.flatnonzero(bad_label.to_numpy())[0])
        raise IngestError(f"{path}: data row {i + 1} (line {i + 2}): label must be 0 or 1")
    bad_time = frame[TIME] < 0
    if bad_time.any():
        i = int(np.flatnonzero(bad_time.to_numpy())[0])
        raise IngestError(f"{path}: data row {i + 1} (line {i + 2}): negative time")
    return TransactionTable.from_frame(frame, schema.categorical, schema.numeric)


def batch_of_day(table: TransactionTable, t: int) -> TransactionTable:
    """B_t: all transactions of day ``t`` in time order (empty if out of range)."""
    return table.subset(table.days == t)


def window_before(table: TransactionTable, t: int, n: int) -> TransactionTable:
    """The ``n`` most recent batches before day ``t``: days ``t-n .. t-1``."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    d = table.days
    return table.subset((d >= t - n) & (d < t))


def target_and_history(table: TransactionTable, window: DayWindow) -> tuple[TransactionTable, TransactionTable]:
    return batch_of_day(table, window.t), window_before(table, window.t, window.theta)
