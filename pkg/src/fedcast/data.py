"""Weekly sales ingestion and feature engineering.

Parses the 8-column store/week CSV schema, z-scores the numeric columns,
one-hot encodes the calendar (weekday, month, year), and augments each row
with lagged sales so the regressor sees recent history.  Stores become
clients: each gets a chronological train/test split and its own
normalizers fit on the training portion only.  A pooled variant with a
shared normalizer backs the centralized baseline.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import date as Date
from datetime import datetime

import numpy as np

REQUIRED_COLUMNS = (
    "Store",
    "Date",
    "Weekly_Sales",
    "Holiday_Flag",
    "Temperature",
    "Fuel_Price",
    "CPI",
    "Unemployment",
)

DEFAULT_DATE_FORMAT = "%d-%m-%Y"

# z-scored numeric inputs, in feature order (holiday stays a raw 0/1).
NUMERIC_FEATURES = ("temperature", "fuel_price", "cpi", "unemployment")

POOLED_STORE_ID = 0


class DataError(Exception):
    pass


class SchemaMismatch(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class DegenerateColumn(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class EmptySplit(DataError):
    pass


@dataclass(frozen=True)
class StoreRecord:
    store_id: int
    date: Date
    weekly_sales: float
    holiday_flag: bool
    temperature: float
    fuel_price: float
    cpi: float
    unemployment: float


@dataclass(frozen=True)
class Normalizer:
    """z-score transform with population standard deviation."""

    mean: float
    std: float

    def apply(self, v):
        return (np.asarray(v, dtype=np.float64) - self.mean) / self.std

    def invert(self, v):
        return np.asarray(v, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class FeatureRow:
    x: np.ndarray
    y: float
    store_id: int
    date: Date


@dataclass
class ClientDataset:
    store_id: int
    train: list[FeatureRow]
    test: list[FeatureRow]
    split_ratio: float
    target_normalizer: Normalizer

    @property
    def n_train(self) -> int:
        return len(self.train)


@dataclass
class DataConfig:
    date_format: str = DEFAULT_DATE_FORMAT
    lags: tuple[int, ...] = (1, 2, 3, 4)
    split_even: float = 0.7
    split_odd: float = 0.3
    split_overrides: dict[int, float] = field(default_factory=dict)

    def split_fraction(self, store_id: int) -> float:
        if store_id in self.split_overrides:
            return self.split_overrides[store_id]
        return self.split_even if store_id % 2 == 0 else self.split_odd

    def describe(self) -> dict:
        return {
            "date_format": self.date_format,
            "lags": list(self.lags),
            "split_even": self.split_even,
            "split_odd": self.split_odd,
            "split_overrides": {str(k): v for k, v in sorted(self.split_overrides.items())},
        }


def parse_dataset(csv_text: str, date_format: str = DEFAULT_DATE_FORMAT) -> list[StoreRecord]:
    """Parse CSV text into records grouped and sorted by (store, date).

    The header must carry exactly the 8 schema columns (any order).  Bad
    numerics, bad dates, negative sales, or out-of-range flags fail with
    the 1-based line number.
    """
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatch("empty input: no header row") from None
    names = [h.strip() for h in header]
    missing = set(REQUIRED_COLUMNS) - set(names)
    extra = set(names) - set(REQUIRED_COLUMNS)
    if missing or extra:
        raise SchemaMismatch(
            f"header mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
        )
    col = {name: names.index(name) for name in REQUIRED_COLUMNS}

    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(names):
            raise MalformedRow(line_no, f"expected {len(names)} fields, got {len(row)}")
        try:
            store_id = int(row[col["Store"]])
            when = datetime.strptime(row[col["Date"]].strip(), date_format).date()
            sales = float(row[col["Weekly_Sales"]])
            flag = int(row[col["Holiday_Flag"]])
            temperature = float(row[col["Temperature"]])
            fuel = float(row[col["Fuel_Price"]])
            cpi = float(row[col["CPI"]])
            unemployment = float(row[col["Unemployment"]])
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
        if store_id < 1:
            raise MalformedRow(line_no, f"store id {store_id} < 1")
        if sales < 0:
            raise MalformedRow(line_no, f"negative weekly sales {sales}")
        if flag not in (0, 1):
            raise MalformedRow(line_no, f"holiday flag {flag} not 0/1")
        records.append(
            StoreRecord(
                store_id=store_id,
                date=when,
                weekly_sales=sales,
                holiday_flag=bool(flag),
                temperature=temperature,
                fuel_price=fuel,
                cpi=cpi,
                unemployment=unemployment,
            )
        )
    records.sort(key=lambda r: (r.store_id, r.date))
    return records


def fit_normalizer(values: np.ndarray) -> Normalizer:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot fit a normalizer on no values")
    mean = float(np.mean(values))
    std = float(np.std(values))  # population
    if std == 0.0:
        raise DegenerateColumn(f"constant column (all values {mean})")
    return Normalizer(mean=mean, std=std)


def expand_date(when: Date) -> tuple[int, int, int]:
    """(weekday 0=Monday, month 1-12, year)."""
    return when.weekday(), when.month, when.year


def build_lag_matrix(targets: np.ndarray, lags: tuple[int, ...]) -> tuple[np.ndarray, int]:
    """Lagged copies of a chronological target series.

    Returns (matrix, offset): row i of the matrix holds
    targets[offset + i - lag] for each lag, and the first *offset* rows of
    the series (offset = max lag) carry too little history and are dropped.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if not lags:
        return np.zeros((targets.shape[0], 0)), 0
    if any(lag < 1 for lag in lags):
        raise DataError(f"lags must be positive: {lags}")
    offset = max(lags)
    if targets.shape[0] <= offset:
        raise InsufficientHistory(
            f"series of length {targets.shape[0]} cannot support lag {offset}"
        )
    columns = [targets[offset - lag : targets.shape[0] - lag] for lag in lags]
    return np.stack(columns, axis=1), offset


def split_train_test(rows: list, train_fraction: float) -> tuple[list, list]:
    """Chronological split: first floor(n * fraction) rows train, rest test."""
    if not 0 < train_fraction < 1:
        raise DataError(f"train fraction {train_fraction} outside (0, 1)")
    n = len(rows)
    n_train = int(np.floor(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise EmptySplit(f"{n} rows at fraction {train_fraction} empties one side")
    return rows[:n_train], rows[n_train:]


def _group_by_store(records: list[StoreRecord]) -> dict[int, list[StoreRecord]]:
    groups: dict[int, list[StoreRecord]] = {}
    for rec in records:
        groups.setdefault(rec.store_id, []).append(rec)
    for recs in groups.values():
        recs.sort(key=lambda r: r.date)
    return groups


@dataclass
class _StoreSplit:
    """A store's lag-dropped rows with their split boundary, pre-features."""

    store_id: int
    records: list[StoreRecord]  # full chronological history
    offset: int  # rows dropped for lag history
    n_train: int  # among kept rows
    fraction: float

    @property
    def kept(self) -> list[StoreRecord]:
        return self.records[self.offset :]

    @property
    def train_records(self) -> list[StoreRecord]:
        return self.kept[: self.n_train]

    @property
    def test_records(self) -> list[StoreRecord]:
        return self.kept[self.n_train :]


def _split_store(store_id: int, records: list[StoreRecord], config: DataConfig) -> _StoreSplit:
    targets = np.array([r.weekly_sales for r in records])
    try:
        _, offset = build_lag_matrix(targets, config.lags)
    except InsufficientHistory as exc:
        raise InsufficientHistory(f"store {store_id}: {exc}") from None
    kept = records[offset:]
    fraction = config.split_fraction(store_id)
    try:
        train, _ = split_train_test(kept, fraction)
    except EmptySplit as exc:
        raise EmptySplit(f"store {store_id}: {exc}") from None
    return _StoreSplit(
        store_id=store_id,
        records=records,
        offset=offset,
        n_train=len(train),
        fraction=fraction,
    )


def _column_values(records: list[StoreRecord], name: str) -> np.ndarray:
    return np.array([getattr(r, name) for r in records], dtype=np.float64)


def _fit_store_normalizers(
    train_records: list[StoreRecord], context: str
) -> dict[str, Normalizer]:
    normalizers = {}
    for name in NUMERIC_FEATURES + ("weekly_sales",):
        try:
            normalizers[name] = fit_normalizer(_column_values(train_records, name))
        except DegenerateColumn as exc:
            raise DegenerateColumn(f"{context}, column {name}: {exc}") from None
    return normalizers


def feature_dim(year_vocab: tuple[int, ...], lags: tuple[int, ...]) -> int:
    # numerics + holiday flag, weekday one-hot, month one-hot, years, lags
    return 5 + 7 + 12 + len(year_vocab) + len(lags)


def _build_rows(
    split: _StoreSplit,
    normalizers: dict[str, Normalizer],
    year_vocab: tuple[int, ...],
    config: DataConfig,
) -> tuple[list[FeatureRow], list[FeatureRow]]:
    records = split.records
    target_norm = normalizers["weekly_sales"]
    raw_targets = np.array([r.weekly_sales for r in records])
    norm_targets = target_norm.apply(raw_targets)
    year_index = {year: i for i, year in enumerate(year_vocab)}

    rows = []
    for t in range(split.offset, len(records)):
        rec = records[t]
        weekday, month, year = expand_date(rec.date)
        x = np.zeros(feature_dim(year_vocab, config.lags))
        pos = 0
        for name in NUMERIC_FEATURES:
            x[pos] = normalizers[name].apply(getattr(rec, name))
            pos += 1
        x[pos] = 1.0 if rec.holiday_flag else 0.0
        pos += 1
        x[pos + weekday] = 1.0
        pos += 7
        x[pos + month - 1] = 1.0
        pos += 12
        if year in year_index:  # unseen years stay an all-zero block
            x[pos + year_index[year]] = 1.0
        pos += len(year_vocab)
        for lag in config.lags:
            x[pos] = norm_targets[t - lag]
            pos += 1
        rows.append(FeatureRow(x=x, y=float(norm_targets[t]), store_id=rec.store_id, date=rec.date))
    return rows[: split.n_train], rows[split.n_train :]


def _train_year_vocab(splits: list[_StoreSplit]) -> tuple[int, ...]:
    years = set()
    for split in splits:
        years.update(r.date.year for r in split.train_records)
    return tuple(sorted(years))


def partition_by_store(
    records: list[StoreRecord], config: DataConfig
) -> list[ClientDataset]:
    """One ClientDataset per store, normalized per store (no test leakage).

    The year one-hot vocabulary is fixed from the union of all stores'
    training rows so feature dimensions agree across clients.
    """
    groups = _group_by_store(records)
    if not groups:
        raise DataError("no records to partition")
    splits = [_split_store(sid, recs, config) for sid, recs in sorted(groups.items())]
    vocab = _train_year_vocab(splits)

    clients = []
    for split in splits:
        normalizers = _fit_store_normalizers(split.train_records, f"store {split.store_id}")
        train, test = _build_rows(split, normalizers, vocab, config)
        clients.append(
            ClientDataset(
                store_id=split.store_id,
                train=train,
                test=test,
                split_ratio=split.fraction,
                target_normalizer=normalizers["weekly_sales"],
            )
        )
    return clients


@dataclass
class PooledDataset:
    """All stores' rows under one shared normalizer (centralized mode)."""

    dataset: ClientDataset
    test_by_store: dict[int, list[FeatureRow]]


def build_pooled(records: list[StoreRecord], config: DataConfig) -> PooledDataset:
    """Concatenate every store's split under normalizers fit on pooled train.

    Split boundaries are identical to :func:`partition_by_store`; only the
    normalization pools across stores.
    """
    groups = _group_by_store(records)
    if not groups:
        raise DataError("no records to pool")
    splits = [_split_store(sid, recs, config) for sid, recs in sorted(groups.items())]
    vocab = _train_year_vocab(splits)

    pooled_train_records = [r for split in splits for r in split.train_records]
    normalizers = _fit_store_normalizers(pooled_train_records, "pooled")

    train: list[FeatureRow] = []
    test: list[FeatureRow] = []
    test_by_store: dict[int, list[FeatureRow]] = {}
    for split in splits:
        store_train, store_test = _build_rows(split, normalizers, vocab, config)
        train.extend(store_train)
        test.extend(store_test)
        test_by_store[split.store_id] = store_test

    dataset = ClientDataset(
        store_id=POOLED_STORE_ID,
        train=train,
        test=test,
        split_ratio=float("nan"),
        target_normalizer=normalizers["weekly_sales"],
    )
    return PooledDataset(dataset=dataset, test_by_store=test_by_store)


def rows_to_arrays(rows: list[FeatureRow]) -> tuple[np.ndarray, np.ndarray]:
    if not rows:
        return np.zeros((0, 0)), np.zeros(0)
    x = np.stack([row.x for row in rows])
    y = np.array([row.y for row in rows])
    return x, y
