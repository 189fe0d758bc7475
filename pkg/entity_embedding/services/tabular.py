"""Tabular data model: schema, ingestion, splitting, target scaling and MAPE.

A Dataset is an immutable block of integer-coded categorical features with
a strictly positive Sales target and one calendar date per row. Value
dictionaries are built once over the whole file so that every split shares
one index space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import DomainError, EmptyDatasetError, RowError, SchemaError, ShapeError
from ..utils.numerics import seeded_rng

logger = logging.getLogger(__name__)

__all__ = [
    "FeatureKind",
    "FeatureSpec",
    "FeatureSchema",
    "Sample",
    "Dataset",
    "ColumnMap",
    "SplitMode",
    "TargetTransform",
    "EvalReport",
    "FEATURE_ORDER",
    "DEFAULT_EMBEDDING_DIMS",
    "ingest_csv",
    "dataset_from_frame",
    "split",
    "sparsify",
    "transform_target",
    "inverse_transform",
    "mape",
    "one_hot",
    "one_hot_encode",
    "category_mean_sales",
    "date_range_of",
]

# Feature order and embedding widths of the Rossmann feature table
FEATURE_ORDER: Tuple[str, ...] = (
    "store", "day_of_week", "day", "month", "year", "promo", "state",
)
DEFAULT_EMBEDDING_DIMS: Dict[str, int] = {
    "store": 10,
    "day_of_week": 6,
    "day": 10,
    "month": 6,
    "year": 2,
    "promo": 1,
    "state": 6,
}


class FeatureKind(str, Enum):
    CATEGORICAL = "categorical"
    BINARY = "binary"


class SplitMode(str, Enum):
    TEMPORAL = "temporal"
    SHUFFLED = "shuffled"


@dataclass(frozen=True)
class FeatureSpec:
    """One categorical input: its value dictionary and embedding width."""

    name: str
    kind: FeatureKind
    labels: Tuple[str, ...]
    embedding_dim: int

    def __post_init__(self) -> None:
        m = len(self.labels)
        if m < 1:
            raise SchemaError(f"feature '{self.name}' has no values", column=self.name)
        if len(set(self.labels)) != m:
            raise SchemaError(f"feature '{self.name}' has duplicate labels", column=self.name)
        upper = m - 1 if m >= 2 else 1
        if not 1 <= self.embedding_dim <= upper:
            raise SchemaError(
                f"feature '{self.name}': embedding dim {self.embedding_dim} outside [1, {upper}]",
                column=self.name,
            )

    @property
    def cardinality(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise SchemaError(f"feature '{self.name}': unknown label {label!r}", column=self.name) from None


@dataclass(frozen=True)
class FeatureSchema:
    features: Tuple[FeatureSpec, ...]

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.features]

    @property
    def cardinalities(self) -> List[int]:
        return [f.cardinality for f in self.features]

    @property
    def embedding_dims(self) -> List[int]:
        return [f.embedding_dim for f in self.features]

    @property
    def one_hot_width(self) -> int:
        return sum(self.cardinalities)

    @property
    def embedded_width(self) -> int:
        return sum(self.embedding_dims)

    def __len__(self) -> int:
        return len(self.features)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown feature '{name}'", column=name) from None

    def with_embedding_dims(self, dims: Mapping[str, int]) -> "FeatureSchema":
        """Return a copy with some embedding widths replaced (clipped to bounds)."""
        updated = []
        for spec in self.features:
            if spec.name in dims:
                spec = replace(spec, embedding_dim=_clip_dim(spec.name, int(dims[spec.name]), spec.cardinality))
            updated.append(spec)
        return FeatureSchema(tuple(updated))

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f.name, "kind": f.kind.value, "labels": list(f.labels), "embedding_dim": f.embedding_dim}
                for f in self.features
            ]
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "FeatureSchema":
        return cls(tuple(
            FeatureSpec(
                name=f["name"],
                kind=FeatureKind(f["kind"]),
                labels=tuple(str(v) for v in f["labels"]),
                embedding_dim=int(f["embedding_dim"]),
            )
            for f in payload["features"]
        ))


@dataclass(frozen=True)
class Sample:
    x: Tuple[int, ...]
    y: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable integer-coded rows with Sales targets and dates."""

    schema: FeatureSchema
    x: np.ndarray
    y: np.ndarray
    dates: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=np.int64, copy=True)
        y = np.array(self.y, dtype=np.float64, copy=True)
        dates = np.array(self.dates, dtype="datetime64[D]", copy=True)
        if x.ndim != 2 or x.shape[1] != len(self.schema):
            raise ShapeError(f"x must have {len(self.schema)} columns, got shape {x.shape}")
        if y.shape != (x.shape[0],) or dates.shape != (x.shape[0],):
            raise ShapeError("x, y and dates must have the same number of rows")
        if x.size:
            card = np.asarray(self.schema.cardinalities)
            bad = (x < 0) | (x >= card)
            if bad.any():
                row, col = np.argwhere(bad)[0]
                raise DomainError(
                    f"feature '{self.schema.names[col]}' value {x[row, col]} outside [0, {card[col]})"
                )
        if np.any(~(y > 0)):
            raise DomainError("targets must be strictly positive")
        for arr in (x, y, dates):
            arr.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "dates", dates)

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self.sample(i)

    def sample(self, i: int) -> Sample:
        return Sample(x=tuple(int(v) for v in self.x[i]), y=float(self.y[i]))

    def take(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.schema, self.x[idx], self.y[idx], self.dates[idx])


@dataclass(frozen=True)
class ColumnMap:
    """Names of the CSV columns holding each schema role."""

    store: str = "Store"
    date: str = "Date"
    sales: str = "Sales"
    promo: str = "Promo"
    state: str = "State"

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping[str, str]]) -> "ColumnMap":
        mapping = dict(mapping or {})
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown column roles: {sorted(unknown)}")
        return cls(**mapping)


@dataclass(frozen=True)
class TargetTransform:
    """log(Sales) / log(sale_max), with sale_max taken from training rows only."""

    sale_max: float

    def __post_init__(self) -> None:
        if not self.sale_max > 1.0:
            raise DomainError(f"sale_max must exceed 1, got {self.sale_max}")

    @classmethod
    def fit(cls, train: Dataset) -> "TargetTransform":
        return cls(float(np.max(train.y)))

    def transform(self, sales: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        s = np.asarray(sales, dtype=np.float64)
        if np.any(~(s > 0)):
            raise DomainError("sales must be strictly positive")
        v = np.log(s) / np.log(self.sale_max)
        return float(v) if v.ndim == 0 else v

    def inverse(self, values: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        v = np.asarray(values, dtype=np.float64)
        s = np.exp(v * np.log(self.sale_max))
        return float(s) if s.ndim == 0 else s


@dataclass(frozen=True)
class EvalReport:
    method: str
    mape: float
    with_embeddings: bool
    split_mode: SplitMode
    seed: int
    runtime_s: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        if not self.mape >= 0.0:
            raise DomainError(f"MAPE must be nonnegative, got {self.mape}")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mape": self.mape,
            "with_embeddings": self.with_embeddings,
            "split_mode": self.split_mode.value,
            "seed": self.seed,
            "runtime_s": self.runtime_s,
        }


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _clip_dim(name: str, dim: int, cardinality: int) -> int:
    upper = cardinality - 1 if cardinality >= 2 else 1
    clipped = min(max(dim, 1), upper)
    if clipped != dim:
        logger.warning("Embedding dim for '%s' clipped from %s to %s (cardinality %s)",
                       name, dim, clipped, cardinality)
    return clipped


def _vocabulary(values: pd.Series) -> Tuple[Tuple[str, ...], np.ndarray]:
    """Sorted label tuple and dense codes for one column.

    Labels sort numerically when every label is an integer, otherwise
    lexicographically.
    """
    uniques = pd.unique(values)
    try:
        labels = sorted(uniques, key=lambda v: int(v))
    except (TypeError, ValueError):
        labels = sorted(uniques)
    lookup = {label: i for i, label in enumerate(labels)}
    codes = values.map(lookup).to_numpy(dtype=np.int64)
    return tuple(str(v) for v in labels), codes


def _first_bad_row(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0]) + 1


def dataset_from_frame(
    frame: pd.DataFrame,
    column_map: ColumnMap | Mapping[str, str] | None = None,
    embedding_dims: Optional[Mapping[str, int]] = None,
) -> Dataset:
    """Build a Dataset from a raw frame with Store/Date/Sales/Promo/State columns.

    Args:
        frame: Raw table; all cells are read as text.
        column_map: Column names per schema role.
        embedding_dims: Embedding width per feature name (clipped into bounds).

    Returns:
        Dataset with derived day-of-week, day, month and year features and
        rows with Sales <= 0 removed.

    Raises:
        SchemaError: A mapped column is absent.
        RowError: Missing value, unparseable date or unparseable Sales.
        EmptyDatasetError: Nothing left after filtering.
    """
    cmap = column_map if isinstance(column_map, ColumnMap) else ColumnMap.from_mapping(column_map)
    dims = dict(DEFAULT_EMBEDDING_DIMS)
    dims.update(embedding_dims or {})

    roles = {"store": cmap.store, "date": cmap.date, "sales": cmap.sales,
             "promo": cmap.promo, "state": cmap.state}
    for role, column in roles.items():
        if column not in frame.columns:
            raise SchemaError(f"missing column '{column}' (role '{role}')", column=column)

    raw = frame[list(roles.values())].astype(str).apply(lambda s: s.str.strip())
    raw.columns = list(roles.keys())
    raw = raw.reset_index(drop=True)

    for role in roles:
        empty = (raw[role] == "") | (raw[role].str.lower() == "nan")
        if empty.any():
            raise RowError("missing value", _first_bad_row(empty.to_numpy()), column=roles[role])

    dates = pd.to_datetime(raw["date"], format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        row = _first_bad_row(dates.isna().to_numpy())
        raise RowError(f"unparseable date {raw['date'].iloc[row - 1]!r}", row, column=cmap.date)
    sales = pd.to_numeric(raw["sales"], errors="coerce")
    if sales.isna().any():
        row = _first_bad_row(sales.isna().to_numpy())
        raise RowError(f"unparseable sales value {raw['sales'].iloc[row - 1]!r}", row, column=cmap.sales)

    keep = (sales > 0).to_numpy()
    dropped = int((~keep).sum())
    if dropped:
        logger.info("Dropped %s rows with Sales <= 0", dropped)
    raw = raw.loc[keep].reset_index(drop=True)
    dates = dates.loc[keep].reset_index(drop=True)
    sales = sales.loc[keep].reset_index(drop=True)
    if raw.empty:
        raise EmptyDatasetError("no rows with positive Sales")

    columns = {
        "store": raw["store"],
        "day_of_week": (dates.dt.dayofweek + 1).astype(str),
        "day": dates.dt.day.astype(str),
        "month": dates.dt.month.astype(str),
        "year": dates.dt.year.astype(str),
        "promo": raw["promo"],
        "state": raw["state"],
    }
    specs: List[FeatureSpec] = []
    codes: List[np.ndarray] = []
    for name in FEATURE_ORDER:
        labels, col_codes = _vocabulary(columns[name])
        kind = FeatureKind.BINARY if name == "promo" and len(labels) <= 2 else FeatureKind.CATEGORICAL
        specs.append(FeatureSpec(name, kind, labels, _clip_dim(name, int(dims[name]), len(labels))))
        codes.append(col_codes)

    schema = FeatureSchema(tuple(specs))
    dataset = Dataset(
        schema=schema,
        x=np.column_stack(codes),
        y=sales.to_numpy(dtype=np.float64),
        dates=dates.to_numpy(dtype="datetime64[D]"),
    )
    logger.info("Built dataset: %s rows, cardinalities %s",
                len(dataset), dict(zip(schema.names, schema.cardinalities)))
    return dataset


def ingest_csv(
    path: Union[str, Path],
    column_map: ColumnMap | Mapping[str, str] | None = None,
    embedding_dims: Optional[Mapping[str, int]] = None,
) -> Dataset:
    """Read a Rossmann-shaped CSV file into a Dataset.

    See :func:`dataset_from_frame` for the derivation rules and errors.

    Raises:
        FileNotFoundError: *path* does not exist.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"CSV file not found: {path}")
    logger.info("Ingesting CSV: %s", path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return dataset_from_frame(frame, column_map, embedding_dims)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split(
    d: Dataset,
    mode: SplitMode | str,
    test_fraction: float,
    seed: int,
) -> Tuple[Dataset, Dataset]:
    """Partition *d* into train and test sets.

    Temporal mode keeps whole days together: the last days whose row count
    is closest to ``test_fraction * len(d)`` form the test set, so every
    training date precedes every test date. Shuffled mode applies a seeded
    permutation and takes the last ``round(test_fraction * len(d))`` rows as
    test.
    """
    mode = SplitMode(mode)
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(d)
    if n < 2:
        raise DomainError(f"dataset too small to split ({n} rows)")
    n_test = int(np.clip(round(test_fraction * n), 1, n - 1))

    if mode is SplitMode.SHUFFLED:
        perm = seeded_rng(seed).permutation(n)
        train_idx, test_idx = perm[: n - n_test], perm[n - n_test:]
    else:
        days, counts = np.unique(d.dates, return_counts=True)
        if days.size < 2:
            raise DomainError("temporal split needs at least two distinct dates")
        tail = np.cumsum(counts[::-1])[:-1]  # test sizes for 1..ndays-1 trailing days
        k = int(np.argmin(np.abs(tail - n_test))) + 1
        boundary = days[days.size - k]
        test_mask = d.dates >= boundary
        train_idx, test_idx = np.flatnonzero(~test_mask), np.flatnonzero(test_mask)
        logger.debug("Temporal split boundary %s: %s train / %s test rows",
                     boundary, train_idx.size, test_idx.size)
    return d.take(train_idx), d.take(test_idx)


def sparsify(train: Dataset, n: int, seed: int) -> Dataset:
    """Sample *n* distinct rows of *train* without replacement."""
    if n < 1 or n > len(train):
        raise DomainError(f"cannot sample {n} rows from {len(train)}")
    idx = seeded_rng(seed).choice(len(train), size=n, replace=False)
    return train.take(idx)


# ---------------------------------------------------------------------------
# Targets and metrics
# ---------------------------------------------------------------------------

def transform_target(sales: Union[float, np.ndarray], t: TargetTransform) -> Union[float, np.ndarray]:
    """Map Sales to ``log(sales) / log(sale_max)``; raises DomainError for sales <= 0."""
    return t.transform(sales)


def inverse_transform(v: Union[float, np.ndarray], t: TargetTransform) -> Union[float, np.ndarray]:
    return t.inverse(v)


def mape(pred: Sequence[float] | np.ndarray, actual: Sequence[float] | np.ndarray) -> float:
    """Mean absolute percentage error ``mean(|actual - pred| / actual)``."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if a.size == 0 or p.size != a.size:
        raise ShapeError(f"MAPE needs equal nonempty lengths, got {p.size} and {a.size}")
    if np.any(~(a > 0)):
        raise DomainError("actual values must be strictly positive")
    return float(np.mean(np.abs(a - p) / a))


def one_hot(value: int, cardinality: int) -> np.ndarray:
    """Kronecker-delta vector of length *cardinality* with a 1 at *value*."""
    if not 0 <= value < cardinality:
        raise DomainError(f"value {value} outside [0, {cardinality})")
    vec = np.zeros(cardinality, dtype=np.float64)
    vec[value] = 1.0
    return vec


def one_hot_encode(x: np.ndarray, cardinalities: Sequence[int]) -> np.ndarray:
    """Concatenated one-hot encoding of an integer code matrix."""
    codes = np.asarray(x, dtype=np.int64)
    if codes.ndim == 1:
        codes = codes[None, :]
    if codes.shape[1] != len(cardinalities):
        raise ShapeError(f"expected {len(cardinalities)} columns, got {codes.shape[1]}")
    offsets = np.concatenate([[0], np.cumsum(cardinalities)[:-1]]).astype(np.int64)
    if np.any(codes < 0) or np.any(codes >= np.asarray(cardinalities)):
        raise DomainError("category code outside its cardinality")
    out = np.zeros((codes.shape[0], int(sum(cardinalities))), dtype=np.float64)
    rows = np.repeat(np.arange(codes.shape[0]), codes.shape[1])
    out[rows, (codes + offsets).ravel()] = 1.0
    return out


def category_mean_sales(d: Dataset, feature: int | str) -> np.ndarray:
    """Mean Sales per category of one feature (NaN for absent categories)."""
    j = d.schema.index(feature) if isinstance(feature, str) else int(feature)
    m = d.schema.cardinalities[j]
    sums = np.bincount(d.x[:, j], weights=d.y, minlength=m)
    counts = np.bincount(d.x[:, j], minlength=m)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def date_range_of(d: Dataset) -> Tuple[date, date]:
    return (pd.Timestamp(d.dates.min()).date(), pd.Timestamp(d.dates.max()).date())
