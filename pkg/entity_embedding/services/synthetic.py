"""Synthetic Rossmann-shaped sales data with known structure.

Each store has a latent vector. The first latent coordinate shifts the
store's sales level, the second scales its response to promotions, and
day-of-week and month effects plus log-normal noise complete the model.
The ground truth makes it possible to check how much of the latent store
geometry a learned embedding recovers and how close a model gets to the
irreducible error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date
from typing import Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from ..errors import ConfigError
from ..utils.numerics import seeded_rng
from .tabular import ColumnMap, Dataset, dataset_from_frame

logger = logging.getLogger(__name__)

__all__ = ["SyntheticConfig", "SyntheticTruth", "synthetic_frame", "generate_synthetic", "bayes_mape_floor"]


@dataclass(frozen=True)
class SyntheticConfig:
    n_stores: int = 100
    latent_dim: int = 2
    n_states: int = 12
    n_rows: int = 50000
    n_days: int = 942
    start_date: str = "2013-01-01"
    base_log_sales: float = 8.5
    store_effect: float = 0.5
    promo_effect: float = 0.3
    promo_store_effect: float = 0.15
    promo_rate: float = 0.4
    dow_effect: float = 0.2
    month_effect: float = 0.1
    noise_sigma: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_stores", "latent_dim", "n_states", "n_rows", "n_days"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.promo_rate <= 1.0:
            raise ConfigError(f"promo_rate must be in [0, 1], got {self.promo_rate}")
        try:
            date.fromisoformat(self.start_date)
        except ValueError as exc:
            raise ConfigError(f"start_date must be YYYY-MM-DD, got {self.start_date!r}") from exc

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping]) -> "SyntheticConfig":
        mapping = dict(mapping or {})
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic settings: {sorted(unknown)}")
        return cls(**mapping)


@dataclass(frozen=True)
class SyntheticTruth:
    """Generator parameters aligned with the Dataset's category codes."""

    store_latent: np.ndarray
    store_state: np.ndarray
    dow_effects: np.ndarray
    month_effects: np.ndarray
    clean_sales: np.ndarray
    noise_sigma: float
    bayes_floor: float

    def to_dict(self) -> dict:
        return {
            "noise_sigma": self.noise_sigma,
            "bayes_floor": self.bayes_floor,
            "n_stores": int(self.store_latent.shape[0]),
            "latent_dim": int(self.store_latent.shape[1]),
        }


def bayes_mape_floor(sigma: float, draws: int = 1_000_000, seed: int = 0) -> float:
    """Simulated ``E|1 - exp(eps - sigma^2 / 2)|`` for ``eps ~ N(0, sigma^2)``."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return 0.0
    eps = seeded_rng(seed).normal(0.0, sigma, size=draws)
    return float(np.mean(np.abs(1.0 - np.exp(eps - sigma ** 2 / 2.0))))


def synthetic_frame(cfg: SyntheticConfig) -> Tuple[pd.DataFrame, dict]:
    """Raw text table plus the generator parameters indexed by store id.

    Rows are distinct (store, day) cells drawn from the full grid when it is
    large enough.
    """
    rng = seeded_rng(cfg.seed)
    latent = rng.normal(size=(cfg.n_stores, cfg.latent_dim))
    state = rng.integers(0, cfg.n_states, size=cfg.n_stores)
    dow_fx = rng.normal(0.0, cfg.dow_effect, size=7)
    month_fx = rng.normal(0.0, cfg.month_effect, size=12)

    grid = cfg.n_stores * cfg.n_days
    cells = rng.choice(grid, size=cfg.n_rows, replace=cfg.n_rows > grid)
    store = cells // cfg.n_days
    offset = cells % cfg.n_days
    dates = pd.Timestamp(cfg.start_date) + pd.to_timedelta(offset, unit="D")
    promo = (rng.random(cfg.n_rows) < cfg.promo_rate).astype(np.int64)

    z1 = latent[store, 0]
    z2 = latent[store, 1] if cfg.latent_dim > 1 else np.zeros(cfg.n_rows)
    clean_log = (
        cfg.base_log_sales
        + cfg.store_effect * z1
        + promo * (cfg.promo_effect + cfg.promo_store_effect * z2)
        + dow_fx[dates.dayofweek.to_numpy()]
        + month_fx[dates.month.to_numpy() - 1]
    )
    noise = rng.normal(0.0, cfg.noise_sigma, size=cfg.n_rows) if cfg.noise_sigma > 0 else 0.0
    clean_sales = np.maximum(np.exp(clean_log), 1.0)
    sales = np.maximum(np.exp(clean_log + noise), 1.0)

    frame = pd.DataFrame({
        "Store": (store + 1).astype(str),
        "Date": dates.strftime("%Y-%m-%d"),
        "Sales": [repr(float(s)) for s in sales],
        "Promo": promo.astype(str),
        "State": [f"S{s + 1:02d}" for s in state[store]],
    })
    params = {
        "latent": latent,
        "state": state,
        "dow_effects": dow_fx,
        "month_effects": month_fx,
        "clean_sales": clean_sales,
        "sales": sales,
    }
    return frame, params


def generate_synthetic(
    cfg: SyntheticConfig,
    embedding_dims: Optional[Mapping[str, int]] = None,
) -> Tuple[Dataset, SyntheticTruth]:
    """Generate a Dataset and its ground truth; identical for identical configs."""
    frame, params = synthetic_frame(cfg)
    parsed = dataset_from_frame(frame, ColumnMap(), embedding_dims)
    # keep the exact generated floats rather than their text round trip
    dataset = Dataset(parsed.schema, parsed.x, params["sales"], parsed.dates)

    store_ids = np.array([int(label) - 1 for label in dataset.schema.features[0].labels])
    truth = SyntheticTruth(
        store_latent=params["latent"][store_ids],
        store_state=params["state"][store_ids],
        dow_effects=params["dow_effects"],
        month_effects=params["month_effects"],
        clean_sales=params["clean_sales"],
        noise_sigma=cfg.noise_sigma,
        bayes_floor=bayes_mape_floor(cfg.noise_sigma, seed=cfg.seed),
    )
    logger.info("Generated synthetic dataset: %s rows, %s stores, sigma=%s, Bayes MAPE floor %.4f",
                len(dataset), store_ids.size, cfg.noise_sigma, truth.bayes_floor)
    return dataset, truth
