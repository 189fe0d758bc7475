"""Distance-weighted k-nearest-neighbour regression.

Queries are answered against the stored rows in their original order, so
ties at the k-th distance always resolve to the lowest row index. Rows can
be dense (embedded) coordinates, or integer category codes standing for
their one-hot encoding, in which case the Minkowski distance is derived from
the number of mismatching features without materialising the indicators.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ..errors import ConfigError, DomainError, ShapeError

logger = logging.getLogger(__name__)

__all__ = ["KnnAlgorithm", "KnnConfig", "KnnModel", "fit_knn", "predict_knn", "predict_knn_batch"]


class KnnAlgorithm(str, Enum):
    BRUTE = "brute"
    KD_TREE = "kd_tree"


@dataclass(frozen=True)
class KnnConfig:
    n_neighbors: int = 10
    p: float = 1.0
    weights: str = "distance"
    algorithm: KnnAlgorithm = KnnAlgorithm.BRUTE
    chunk_size: int = 256

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", KnnAlgorithm(self.algorithm))
        if self.n_neighbors < 1:
            raise ConfigError(f"n_neighbors must be >= 1, got {self.n_neighbors}")
        if self.p <= 0:
            raise ConfigError(f"Minkowski p must be positive, got {self.p}")
        if self.weights != "distance":
            raise ConfigError(f"unsupported weighting '{self.weights}'")
        if self.algorithm is KnnAlgorithm.KD_TREE and self.p < 1:
            raise ConfigError("kd_tree search needs p >= 1")
        if self.chunk_size < 1:
            raise ConfigError(f"chunk_size must be >= 1, got {self.chunk_size}")

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping]) -> "KnnConfig":
        mapping = dict(mapping or {})
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown knn settings: {sorted(unknown)}")
        return cls(**mapping)


@dataclass(frozen=True)
class KnnModel:
    features: np.ndarray
    targets: np.ndarray
    cfg: KnnConfig
    categorical: bool = False
    index: Optional[cKDTree] = field(default=None, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.cfg.n_neighbors


def fit_knn(
    features: np.ndarray,
    targets: np.ndarray,
    cfg: KnnConfig = KnnConfig(),
    categorical: bool = False,
) -> KnnModel:
    """Store the training rows verbatim.

    Args:
        features: Dense rows, or integer codes when *categorical* is set.
        targets: One target per row.
        cfg: Neighbour count, Minkowski order and search algorithm.
        categorical: Treat rows as category codes compared through their
            one-hot encoding.

    Raises:
        DomainError: Fewer rows than neighbours.
    """
    dtype = np.int64 if categorical else np.float64
    x = np.array(features, dtype=dtype)
    y = np.array(targets, dtype=np.float64).ravel()
    if x.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {x.shape}")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} rows but {y.shape[0]} targets")
    if cfg.n_neighbors > x.shape[0]:
        raise DomainError(f"k={cfg.n_neighbors} exceeds the {x.shape[0]} stored rows")
    x.setflags(write=False)
    y.setflags(write=False)

    index = None
    if cfg.algorithm is KnnAlgorithm.KD_TREE:
        if categorical:
            logger.debug("kd_tree search is not used for category codes; falling back to brute force")
        else:
            index = cKDTree(x)
    return KnnModel(x, y, cfg, categorical, index)


def _distances(m: KnnModel, queries: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
    stored = m.features if rows is None else m.features[rows]
    if m.categorical:
        mismatches = (queries[:, None, :] != stored[None, :, :]).sum(axis=2)
        # two indicator entries differ per mismatching feature
        return (2.0 * mismatches) ** (1.0 / m.cfg.p)
    return cdist(queries, stored, metric="minkowski", p=m.cfg.p)


def _weighted_mean(dist: np.ndarray, y: np.ndarray) -> float:
    zero = dist == 0.0
    if zero.any():
        return float(y[zero].mean())
    w = 1.0 / dist
    return float(np.sum(w * y) / np.sum(w))


def _select(dist_row: np.ndarray, k: int, kth: Optional[float] = None) -> np.ndarray:
    """Indices of the k nearest entries, ties resolved by position."""
    if kth is None:
        kth = np.partition(dist_row, k - 1)[k - 1]
    candidates = np.flatnonzero(dist_row <= kth)
    return candidates[np.argsort(dist_row[candidates], kind="stable")][:k]


def _check_queries(m: KnnModel, x: np.ndarray) -> np.ndarray:
    q = np.atleast_2d(np.asarray(x, dtype=np.int64 if m.categorical else np.float64))
    if q.shape[1] != m.features.shape[1]:
        raise ShapeError(f"query width {q.shape[1]} does not match stored width {m.features.shape[1]}")
    return q


def predict_knn_batch(m: KnnModel, x: np.ndarray) -> np.ndarray:
    """Inverse-distance weighted mean of the k nearest targets for every query row.

    A neighbour at distance zero takes over: the prediction is then the mean
    target of the zero-distance neighbours.
    """
    q = _check_queries(m, x)
    out = np.empty(q.shape[0])
    k = m.k
    for start in range(0, q.shape[0], m.cfg.chunk_size):
        block = q[start:start + m.cfg.chunk_size]
        if m.index is not None:
            kth_dist, _ = m.index.query(block, k=k, p=m.cfg.p)
            kth_dist = np.asarray(kth_dist).reshape(block.shape[0], -1)[:, -1]
            for r, row in enumerate(block):
                radius = kth_dist[r] * (1.0 + 1e-9) + 1e-12
                rows = np.sort(np.asarray(m.index.query_ball_point(row, radius, p=m.cfg.p), dtype=np.int64))
                dist = _distances(m, row[None, :], rows)[0]
                chosen = _select(dist, k)
                out[start + r] = _weighted_mean(dist[chosen], m.targets[rows[chosen]])
        else:
            dist = _distances(m, block)
            for r in range(block.shape[0]):
                chosen = _select(dist[r], k)
                out[start + r] = _weighted_mean(dist[r, chosen], m.targets[chosen])
    return out


def predict_knn(m: KnnModel, x: np.ndarray) -> float:
    return float(predict_knn_batch(m, np.asarray(x)[None, :])[0])
