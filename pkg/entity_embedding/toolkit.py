"""Toolkit configuration.

Defaults live in code; ``config.yml`` (or any YAML file passed on the
command line) overrides them section by section. A missing or unreadable
file falls back to the defaults with a warning.
"""

from __future__ import annotations

import copy
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml

from .errors import ConfigError
from .services.tabular import DEFAULT_EMBEDDING_DIMS

logger = logging.getLogger(__name__)

__all__ = ["DEFAULT_CONFIG_PATH", "get_default_config", "deep_merge", "load_config"]

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config.yml"


def get_default_config() -> Dict[str, Any]:
    """Complete default configuration; every knob has an explicit value."""
    return {
        "logging": {
            "level": "INFO",
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
        "tabular": {
            "columns": {"store": "Store", "date": "Date", "sales": "Sales", "promo": "Promo", "state": "State"},
            "embedding_dims": dict(DEFAULT_EMBEDDING_DIMS),
            "cache_dir": ".cache",
        },
        "net": {
            "epochs": 10,
            "batch_size": 128,
            "seed": 0,
            "ensemble_size": 5,
            "seed_stride": 1,
            "hidden_sizes": [1000, 500],
            "input_mode": "embed",
            "learning_rate": 0.001,
            "beta1": 0.9,
            "beta2": 0.999,
            "epsilon": 1e-8,
            "embedding_init": 0.05,
            "loss": "mse",
            "unseen_fallback": False,
            "n_jobs": 1,
        },
        "random_forest": {
            "n_trees": 200,
            "max_depth": 35,
            "min_samples_split": 2,
            "min_samples_leaf": 1,
            "features_per_split": None,
            "bootstrap": True,
            "n_jobs": 1,
        },
        "gbt": {
            "rounds": 3000,
            "shrinkage": 0.02,
            "max_depth": 10,
            "min_samples_split": 2,
            "min_samples_leaf": 1,
            "row_subsample": 0.7,
            "col_subsample": 0.7,
        },
        "knn": {
            "n_neighbors": 10,
            "p": 1.0,
            "weights": "distance",
            "algorithm": "brute",
            "chunk_size": 256,
        },
        "benchmark": {
            "split_mode": "shuffled",
            "test_fraction": 0.10,
            "sparsify": 200000,
            "methods": ["knn", "random_forest", "gbt", "nn"],
            "with_embeddings": True,
            "without_embeddings": True,
            "embedding_source": "first",
            "seed": 0,
        },
        "synthetic": {
            "n_stores": 100,
            "latent_dim": 2,
            "n_states": 12,
            "n_rows": 50000,
            "n_days": 942,
            "start_date": "2013-01-01",
            "base_log_sales": 8.5,
            "store_effect": 0.5,
            "promo_effect": 0.3,
            "promo_store_effect": 0.15,
            "promo_rate": 0.4,
            "dow_effect": 0.2,
            "month_effect": 0.1,
            "noise_sigma": 0.15,
            "seed": 0,
        },
        "geometry": {
            "metric_feature": "store",
            "metric_samples": 1000,
            "metric_scale": "transformed",
            "merge_tol": 0.0,
            "scatter_pairs": 10000,
            "lambdas": [0.1, 1.0, 10.0],
            "density_feature": "store",
            "top_k": 4,
            "bins": 30,
            "random_directions": 2,
            "mardia_components": 4,
            "tsne_features": ["state"],
            "tsne": {
                "perplexity": None,
                "iterations": 1000,
                "learning_rate": 200.0,
                "early_exaggeration": 12.0,
                "exaggeration_iterations": 250,
                "initial_momentum": 0.5,
                "final_momentum": 0.8,
                "min_gain": 0.01,
                "trace_every": 50,
                "seed": 0,
            },
        },
        "analysis": {
            "flags": [],
            "embedding_source": "first",
            "render": ["svg"],
            "palette": {},
            "seed": 0,
        },
    }


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge *override* into a copy of *base*; mappings merge, other values replace."""
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Defaults merged with the YAML file at *path* (``config.yml`` next to the package by default).

    An explicitly given file that is missing or unreadable falls back to the
    defaults with a warning. Unknown top-level sections raise ConfigError.
    """
    defaults = get_default_config()
    config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        with config_path.open("r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        if path is not None:
            logger.warning("Config file %s not found; using defaults", config_path)
        return defaults
    except (OSError, yaml.YAMLError) as exc:
        logger.warning("Failed to load config %s: %s; using defaults", config_path, exc)
        return defaults

    if not isinstance(loaded, Mapping):
        logger.warning("Config file %s does not hold a mapping; using defaults", config_path)
        return defaults
    unknown = set(loaded) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config sections in {config_path}: {sorted(unknown)}")
    logger.debug("Configuration loaded from %s", config_path)
    return deep_merge(defaults, loaded)
