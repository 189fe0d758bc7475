"""Embedding-space analysis.

The empirical metric a trained model induces on the values of one feature,
the positive-definiteness check of its exponential kernel, and the plot
data used to compare learned embeddings with that metric, with sales and
with each other.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.linalg import orth, svdvals
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import procrustes
from scipy.spatial.distance import cdist, pdist, squareform

from ..errors import ConfigError, DegenerateInputError, DomainError, ShapeError
from ..utils.numerics import NormalityReport, dagostino_k2, min_eigenvalue, pca, seeded_rng
from .net import EmbeddingMatrix
from .tabular import Dataset

logger = logging.getLogger(__name__)

__all__ = [
    "CategoryMetric",
    "SchoenbergCheck",
    "ComponentDensity",
    "CrossCorrelationReport",
    "estimate_metric",
    "merge_indiscernible",
    "schoenberg_check",
    "schoenberg_sweep",
    "embedding_metric_scatter",
    "sales_along_direction",
    "random_directions",
    "pc_density_report",
    "cross_subspace_correlation",
    "procrustes_alignment",
    "nn_purity",
]

DEFAULT_LAMBDAS: Tuple[float, ...] = (0.1, 1.0, 10.0)

# Category configurations evaluated per predictor call
METRIC_CHUNK = 65536

Predictor = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CategoryMetric:
    """Distances between the values of one feature."""

    feature: int
    distances: np.ndarray
    labels: Tuple[str, ...] = ()
    samples: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        d = np.asarray(self.distances, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ShapeError(f"distance matrix must be square, got shape {d.shape}")
        object.__setattr__(self, "distances", d)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(d.shape[0])))

    @property
    def size(self) -> int:
        return int(self.distances.shape[0])


@dataclass(frozen=True)
class SchoenbergCheck:
    lam: float
    kernel: np.ndarray
    min_eigenvalue: float
    tolerance: float
    is_positive_definite: bool

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "min_eigenvalue": self.min_eigenvalue,
            "tolerance": self.tolerance,
            "is_positive_definite": self.is_positive_definite,
        }


def estimate_metric(
    predictor: Predictor,
    data: Dataset,
    feature: Union[int, str],
    samples: int = 1000,
    seed: int = 0,
) -> CategoryMetric:
    """Average absolute output difference between every pair of categories.

    One set of ``samples`` complement configurations is drawn from the
    observed rows and shared by all pairs, so symmetry and the triangle
    inequality carry over from ``|a - b|`` to the averages.

    Args:
        predictor: Maps code matrices to model outputs.
        data: Rows to draw complement configurations from.
        feature: Index or name of the feature whose values are compared.
        samples: Number of shared complement configurations.
        seed: Seed of the row draw.

    Raises:
        DegenerateInputError: The feature has fewer than two values.
    """
    i = data.schema.index(feature) if isinstance(feature, str) else int(feature)
    m = data.schema.cardinalities[i]
    if m < 2:
        raise DegenerateInputError(f"feature {i} has {m} value(s); a metric needs at least 2")
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}")
    if len(data) == 0:
        raise DegenerateInputError("no rows to draw complement configurations from")

    t0 = time.perf_counter()
    rng = seeded_rng(seed)
    rows = rng.choice(len(data), size=samples, replace=samples > len(data))
    complement = data.x[rows].copy()

    outputs = np.empty((m, samples))
    per_chunk = max(1, METRIC_CHUNK // samples)
    for start in range(0, m, per_chunk):
        cats = np.arange(start, min(m, start + per_chunk))
        block = np.repeat(complement[None, :, :], cats.size, axis=0)
        block[:, :, i] = cats[:, None]
        outputs[cats] = np.asarray(predictor(block.reshape(-1, complement.shape[1]))).reshape(cats.size, samples)

    distances = squareform(pdist(outputs, metric="cityblock")) / samples
    logger.info("Estimated metric for feature %s (%s values, %s samples) in %.1fs",
                data.schema.names[i], m, samples, time.perf_counter() - t0)
    return CategoryMetric(i, distances, data.schema.features[i].labels, samples, seed)


def merge_indiscernible(metric: CategoryMetric, tol: float = 0.0) -> Tuple[CategoryMetric, np.ndarray]:
    """Collapse categories closer than *tol* into one.

    Returns the merged metric and a map from old to new category index.
    Each merged group is represented by its lowest original index.
    """
    d = metric.distances
    close = (d <= tol) & ~np.eye(metric.size, dtype=bool)
    _, components = connected_components(csr_matrix(close), directed=False)
    representatives = np.array([np.flatnonzero(components == c).min() for c in np.unique(components)])
    order = np.argsort(representatives)
    representatives = representatives[order]
    renumber = np.empty(order.size, dtype=np.int64)
    renumber[order] = np.arange(order.size)
    merge_map = renumber[components]

    labels = tuple(
        "|".join(metric.labels[k] for k in np.flatnonzero(merge_map == new))
        for new in range(representatives.size)
    )
    if representatives.size < metric.size:
        logger.info("Merged %s indiscernible values of feature %s into %s",
                    metric.size, metric.feature, representatives.size)
    merged = CategoryMetric(metric.feature, d[np.ix_(representatives, representatives)], labels,
                            metric.samples, metric.seed)
    return merged, merge_map


def _distance_matrix(metric: Union[CategoryMetric, np.ndarray]) -> np.ndarray:
    return metric.distances if isinstance(metric, CategoryMetric) else np.asarray(metric, dtype=np.float64)


def schoenberg_check(metric: Union[CategoryMetric, np.ndarray], lam: float) -> SchoenbergCheck:
    """Is ``exp(-lam * d)`` positive definite (min eigenvalue above ``1e-10 * m``)?"""
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    d = _distance_matrix(metric)
    kernel = np.exp(-lam * d)
    smallest = min_eigenvalue(kernel)
    tolerance = 1e-10 * kernel.shape[0]
    return SchoenbergCheck(float(lam), kernel, smallest, tolerance, smallest > tolerance)


def schoenberg_sweep(
    metric: Union[CategoryMetric, np.ndarray],
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
) -> List[SchoenbergCheck]:
    checks = [schoenberg_check(metric, lam) for lam in lambdas]
    for c in checks:
        logger.info("Schoenberg lambda=%s: min eigenvalue %.3g (%s)", c.lam, c.min_eigenvalue,
                    "positive definite" if c.is_positive_definite else "not positive definite")
    return checks


def embedding_metric_scatter(
    embs: EmbeddingMatrix,
    metric: CategoryMetric,
    pairs: int = 10000,
    seed: int = 0,
) -> pd.DataFrame:
    """Embedding distance against metric distance for random distinct pairs.

    Columns: ``pair_id, p, q, emb_dist, metric_dist``.
    """
    m = metric.size
    if embs.cardinality != m:
        raise ShapeError(f"embedding has {embs.cardinality} rows but the metric has {m} values")
    rows, cols = np.triu_indices(m, k=1)
    available = rows.size
    if pairs > available:
        logger.warning("Requested %s pairs but only %s distinct pairs exist; clipping", pairs, available)
        pairs = available
    rng = seeded_rng(seed)
    pick = rng.choice(available, size=pairs, replace=False)
    p, q = rows[pick], cols[pick]
    emb_dist = np.linalg.norm(embs.weights[p] - embs.weights[q], axis=1)
    return pd.DataFrame({
        "pair_id": np.arange(pairs),
        "p": p,
        "q": q,
        "emb_dist": emb_dist,
        "metric_dist": metric.distances[p, q],
    })


def sales_along_direction(
    embs: EmbeddingMatrix,
    direction: np.ndarray,
    per_category_mean_sales: np.ndarray,
    component: str = "pc1",
) -> pd.DataFrame:
    """Projection of each category's embedding on a unit direction, paired with its mean Sales.

    Categories without sales (NaN mean) are dropped. Rows are sorted by
    projection. Columns: ``component, category, projection, mean_sales``.
    """
    v = np.asarray(direction, dtype=np.float64).ravel()
    if v.size != embs.dim:
        raise ShapeError(f"direction has {v.size} entries, embedding width is {embs.dim}")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DomainError("direction must be nonzero")
    sales = np.asarray(per_category_mean_sales, dtype=np.float64).ravel()
    if sales.size != embs.cardinality:
        raise ShapeError(f"{sales.size} mean sales for {embs.cardinality} categories")

    projection = embs.weights @ (v / norm)
    keep = ~np.isnan(sales)
    if not keep.all():
        logger.debug("Dropping %s categories without sales", int((~keep).sum()))
    frame = pd.DataFrame({
        "component": component,
        "category": np.flatnonzero(keep),
        "projection": projection[keep],
        "mean_sales": sales[keep],
    })
    return frame.sort_values("projection", kind="mergesort").reset_index(drop=True)


def random_directions(dim: int, count: int = 2, seed: int = 0) -> np.ndarray:
    """``count`` seeded unit vectors, one per row."""
    if dim < 1 or count < 1:
        raise ConfigError("dimension and count must be positive")
    v = seeded_rng(seed).normal(size=(count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True)
class ComponentDensity:
    component: int
    projections: np.ndarray
    bin_edges: np.ndarray
    bin_masses: np.ndarray
    mu: float
    sigma: float
    normality: Optional[NormalityReport]

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "mu": self.mu,
            "sigma": self.sigma,
            "normality": None if self.normality is None else self.normality.to_dict(),
        }


def pc_density_report(
    embs: Union[EmbeddingMatrix, np.ndarray],
    top_k: int = 4,
    bins: int = 30,
) -> List[ComponentDensity]:
    """Histogram, Gaussian fit and K^2 test of the embedding along its top PCA axes."""
    data = embs.weights if isinstance(embs, EmbeddingMatrix) else np.asarray(embs, dtype=np.float64)
    if top_k < 1 or top_k > data.shape[1]:
        raise ShapeError(f"top_k must be in [1, {data.shape[1]}], got {top_k}")
    projections = pca(data).project(data, top_k)

    report = []
    for c in range(top_k):
        proj = projections[:, c]
        counts, edges = np.histogram(proj, bins=bins)
        mu, sigma = stats.norm.fit(proj)
        normality = None
        if proj.size < 20:
            logger.warning("Component %s: %s points are too few for a normality test", c + 1, proj.size)
        else:
            try:
                normality = dagostino_k2(proj)
            except DegenerateInputError as exc:
                logger.warning("Component %s: normality test skipped (%s)", c + 1, exc)
        report.append(ComponentDensity(c + 1, proj, edges, counts / counts.sum(), float(mu), float(sigma), normality))
    return report


@dataclass(frozen=True)
class CrossCorrelationReport:
    max_abs: float
    pairs: Dict[Tuple[int, int], float]

    def between(self, i: int, j: int) -> float:
        return self.pairs[(min(i, j), max(i, j))]

    def to_dict(self) -> dict:
        return {"max_abs": self.max_abs, "pairs": {f"{i}-{j}": v for (i, j), v in self.pairs.items()}}


def _top_canonical_correlation(a: np.ndarray, b: np.ndarray) -> float:
    qa = orth(a - a.mean(axis=0))
    qb = orth(b - b.mean(axis=0))
    if qa.shape[1] == 0 or qb.shape[1] == 0:
        return 0.0
    return float(min(1.0, svdvals(qa.T @ qb)[0]))


def cross_subspace_correlation(
    embs: Sequence[EmbeddingMatrix],
    codes: Union[Dataset, np.ndarray],
) -> CrossCorrelationReport:
    """Largest canonical correlation between the embedded coordinates of each feature pair.

    Each row of *codes* is embedded feature by feature; pairs are keyed
    ``(i, j)`` with ``i < j``.
    """
    x = codes.x if isinstance(codes, Dataset) else np.asarray(codes, dtype=np.int64)
    if len(embs) < 2:
        raise ShapeError("cross-correlation needs at least two features")
    if x.ndim != 2 or x.shape[1] != len(embs):
        raise ShapeError(f"expected {len(embs)} code columns, got shape {x.shape}")
    blocks = [e.weights[x[:, k]] for k, e in enumerate(embs)]
    pairs: Dict[Tuple[int, int], float] = {}
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            pairs[(i, j)] = _top_canonical_correlation(blocks[i], blocks[j])
    return CrossCorrelationReport(max(pairs.values()), pairs)


def procrustes_alignment(reference: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Disparity after the best similarity transform of *target* onto *reference*."""
    ref = np.asarray(reference, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if ref.shape != tgt.shape:
        raise ShapeError(f"shapes {ref.shape} and {tgt.shape} differ")
    _, aligned, disparity = procrustes(ref, tgt)
    return float(disparity), aligned


def nn_purity(points: np.ndarray, labels: Sequence) -> float:
    """Fraction of points whose nearest other point carries the same label."""
    pts = np.asarray(points, dtype=np.float64)
    lab = np.asarray(labels)
    if pts.shape[0] != lab.shape[0] or pts.shape[0] < 2:
        raise ShapeError("purity needs at least two labelled points")
    d = cdist(pts, pts)
    np.fill_diagonal(d, np.inf)
    return float(np.mean(lab[np.argmin(d, axis=1)] == lab))
