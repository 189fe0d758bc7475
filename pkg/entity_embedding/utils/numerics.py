"""Dense numerics shared by the analysis and training services.

Seeded random streams, PCA, the symmetric eigenvalue check and the
normality tests used on learned embeddings. Everything here works in
64-bit floating point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
from scipy import stats

from ..errors import DegenerateInputError, DomainError, ShapeError, SingularCovarianceError

logger = logging.getLogger(__name__)

__all__ = [
    "seeded_rng",
    "child_rng",
    "PcaResult",
    "pca",
    "min_eigenvalue",
    "min_eigenpair",
    "NormalityTest",
    "NormalityReport",
    "chi2_upper_tail",
    "dagostino_k2",
    "mardia",
]

# Symmetry tolerance for eigenvalue checks
SYMMETRY_TOL = 1e-9


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def seeded_rng(seed: int) -> np.random.Generator:
    """Return a deterministic random stream for *seed*.

    PCG64 with a fixed seed sequence gives identical streams on every
    platform. The generator offers ``uniform``, ``normal``, ``permutation``
    and ``choice(..., replace=False)``.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def child_rng(seed: int, stream: int) -> np.random.Generator:
    """Return the independent child stream ``stream`` of ``seed``.

    Parallel consumers (forest trees, ensemble members) each take their own
    child so results do not depend on scheduling order.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)]))
    )


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaResult:
    """Principal axes of a data matrix.

    ``components`` holds orthonormal columns sorted by decreasing eigenvalue.
    """

    components: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray

    def project(self, data: np.ndarray, n_components: int | None = None) -> np.ndarray:
        """Project *data* on the first *n_components* axes."""
        comps = self.components if n_components is None else self.components[:, :n_components]
        return (np.asarray(data, dtype=np.float64) - self.mean) @ comps

    def reconstruct(self, projections: np.ndarray) -> np.ndarray:
        """Map projections back to the (uncentred) data space."""
        k = projections.shape[1]
        return projections @ self.components[:, :k].T + self.mean

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = float(self.eigenvalues.sum())
        if total == 0.0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / total


def pca(data: np.ndarray) -> PcaResult:
    """Eigen-decompose the sample covariance of *data*.

    Args:
        data: Matrix with observations in rows.

    Returns:
        PcaResult with descending eigenvalues. Each component's sign is fixed
        so that its largest-magnitude entry is positive.

    Raises:
        DegenerateInputError: Fewer than two rows or no columns.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
        raise DegenerateInputError(f"PCA needs at least 2 rows and 1 column, got shape {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigenvalues, vectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    vectors = vectors[:, order]
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    vectors = vectors * signs
    return PcaResult(components=vectors, eigenvalues=eigenvalues, mean=mean)


# ---------------------------------------------------------------------------
# Symmetric eigenvalues
# ---------------------------------------------------------------------------

def _check_symmetric(sym: np.ndarray) -> np.ndarray:
    a = np.asarray(sym, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if not np.allclose(a, a.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
        raise DomainError("matrix is not symmetric")
    return a


def min_eigenpair(sym: np.ndarray) -> Tuple[float, np.ndarray]:
    """Return the smallest eigenvalue of a symmetric matrix and its eigenvector."""
    a = _check_symmetric(sym)
    values, vectors = np.linalg.eigh(a)
    return float(values[0]), vectors[:, 0]


def min_eigenvalue(sym: np.ndarray) -> float:
    """Return the smallest eigenvalue of the symmetric matrix *sym*.

    Raises:
        ShapeError: Input is not square.
        DomainError: Input is not symmetric within 1e-9 (relative to its scale).
    """
    a = _check_symmetric(sym)
    return float(np.linalg.eigvalsh(a)[0])


# ---------------------------------------------------------------------------
# Normality tests
# ---------------------------------------------------------------------------

class NormalityTest(str, Enum):
    DAGOSTINO_K2 = "dagostino_k2"
    MARDIA_SKEW = "mardia_skew"
    MARDIA_KURTOSIS = "mardia_kurtosis"


@dataclass(frozen=True)
class NormalityReport:
    statistic: float
    p_value: float
    test: NormalityTest

    def to_dict(self) -> dict:
        return {"test": self.test.value, "statistic": self.statistic, "p_value": self.p_value}


def chi2_upper_tail(statistic: float, dof: float) -> float:
    """P(X >= statistic) for a chi-square variable with *dof* degrees of freedom."""
    return float(np.clip(stats.chi2.sf(statistic, dof), 0.0, 1.0))


def dagostino_k2(samples: np.ndarray) -> NormalityReport:
    """D'Agostino-Pearson K^2 omnibus normality test.

    K^2 is the sum of the squared normal-transformed skewness and kurtosis
    statistics; the p-value is the chi-square(2) upper tail.

    Raises:
        DegenerateInputError: Fewer than 20 samples or zero variance.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 20:
        raise DegenerateInputError(f"K^2 test needs at least 20 samples, got {x.size}")
    if np.ptp(x) == 0.0:
        raise DegenerateInputError("K^2 test is undefined for constant input")
    z_skew, _ = stats.skewtest(x)
    z_kurt, _ = stats.kurtosistest(x)
    k2 = float(z_skew ** 2 + z_kurt ** 2)
    return NormalityReport(statistic=k2, p_value=chi2_upper_tail(k2, 2), test=NormalityTest.DAGOSTINO_K2)


def mardia(data: np.ndarray) -> Tuple[NormalityReport, NormalityReport]:
    """Mardia's multivariate skewness and kurtosis tests.

    Skewness ``n*b1/6`` is compared with chi-square(p(p+1)(p+2)/6), kurtosis
    ``(b2 - p(p+2)) / sqrt(8p(p+2)/n)`` with a two-sided standard normal.

    Raises:
        DegenerateInputError: Requires rows > cols >= 2.
        SingularCovarianceError: Covariance is not invertible.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {x.shape}")
    n, p = x.shape
    if p < 2 or n <= p:
        raise DegenerateInputError(f"Mardia test needs rows > cols >= 2, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    if np.linalg.matrix_rank(cov) < p:
        raise SingularCovarianceError(
            "covariance is singular; reduce the dimension first (e.g. project on the top PCA components)"
        )
    g = centered @ np.linalg.solve(cov, centered.T)
    b1 = float(np.sum(g ** 3)) / n ** 2
    b2 = float(np.mean(np.diag(g) ** 2))

    skew_stat = n * b1 / 6.0
    dof = p * (p + 1) * (p + 2) / 6.0
    skew = NormalityReport(skew_stat, chi2_upper_tail(skew_stat, dof), NormalityTest.MARDIA_SKEW)

    kurt_stat = (b2 - p * (p + 2)) / np.sqrt(8.0 * p * (p + 2) / n)
    kurt_p = float(np.clip(2.0 * stats.norm.sf(abs(kurt_stat)), 0.0, 1.0))
    kurt = NormalityReport(float(kurt_stat), kurt_p, NormalityTest.MARDIA_KURTOSIS)
    logger.debug("Mardia: n=%s p=%s skew=%.4g (p=%.3g) kurt=%.4g (p=%.3g)",
                 n, p, skew_stat, skew.p_value, kurt_stat, kurt_p)
    return skew, kurt
