"""Shared fixtures: a small Rossmann-shaped table, its Dataset and small configs."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from entity_embedding.services.net import TrainConfig
from entity_embedding.services.synthetic import SyntheticConfig
from entity_embedding.services.tabular import (
    FeatureKind,
    FeatureSchema,
    FeatureSpec,
    dataset_from_frame,
)


def make_frame(n_rows: int = 240, n_stores: int = 6, n_days: int = 60, seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    store = rng.integers(1, n_stores + 1, size=n_rows)
    day = rng.integers(0, n_days, size=n_rows)
    dates = pd.Timestamp("2014-03-01") + pd.to_timedelta(day, unit="D")
    promo = rng.integers(0, 2, size=n_rows)
    sales = np.exp(7.0 + 0.2 * store + 0.3 * promo + rng.normal(0.0, 0.1, size=n_rows))
    return pd.DataFrame({
        "Store": store.astype(str),
        "Date": dates.strftime("%Y-%m-%d"),
        "Sales": [f"{s:.2f}" for s in sales],
        "Promo": promo.astype(str),
        "State": [f"S{(s % 3) + 1}" for s in store],
    })


@pytest.fixture
def toy_frame() -> pd.DataFrame:
    return make_frame()


@pytest.fixture
def toy_dataset(toy_frame):
    return dataset_from_frame(toy_frame)


@pytest.fixture
def toy_csv(tmp_path, toy_frame):
    path = tmp_path / "train.csv"
    toy_frame.to_csv(path, index=False)
    return path


@pytest.fixture
def small_schema() -> FeatureSchema:
    """Three features with at most 8 values and embedding widths up to 3."""
    return FeatureSchema((
        FeatureSpec("a", FeatureKind.CATEGORICAL, tuple(str(i) for i in range(8)), 3),
        FeatureSpec("b", FeatureKind.CATEGORICAL, tuple(str(i) for i in range(5)), 2),
        FeatureSpec("c", FeatureKind.BINARY, ("0", "1"), 1),
    ))


@pytest.fixture
def small_train_config() -> TrainConfig:
    return TrainConfig(epochs=3, batch_size=32, ensemble_size=2, hidden_sizes=(16, 8), seed=7)


@pytest.fixture
def tiny_synthetic() -> SyntheticConfig:
    return SyntheticConfig(n_stores=20, n_rows=1500, n_days=120, n_states=4, seed=3)


def random_codes(schema: FeatureSchema, n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.integers(0, m, size=n) for m in schema.cardinalities])
