"""Exact t-SNE for mapping embedding matrices to the plane.

Per-point Gaussian bandwidths are found by bisection so that every
conditional distribution has the requested perplexity. The symmetrised
affinities are matched by a Student-t layout optimised with momentum,
per-parameter gains and an early exaggeration phase.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ..errors import ConfigError, DegenerateInputError, PerplexityError
from ..utils.numerics import seeded_rng

logger = logging.getLogger(__name__)

__all__ = ["TsneConfig", "TsneResult", "conditional_affinities", "joint_affinities", "run_tsne", "tsne"]

# Inputs with fewer points than this default to perplexity 3
SMALL_INPUT = 16


@dataclass(frozen=True)
class TsneConfig:
    perplexity: Optional[float] = None
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iterations: int = 250
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    min_gain: float = 0.01
    trace_every: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.early_exaggeration < 1:
            raise ConfigError(f"early_exaggeration must be >= 1, got {self.early_exaggeration}")
        if self.trace_every < 1:
            raise ConfigError(f"trace_every must be >= 1, got {self.trace_every}")

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping]) -> "TsneConfig":
        mapping = dict(mapping or {})
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown t-SNE settings: {sorted(unknown)}")
        return cls(**mapping)

    def perplexity_for(self, n_points: int) -> float:
        if self.perplexity is not None:
            return float(self.perplexity)
        return 3.0 if n_points < SMALL_INPUT else 5.0


@dataclass
class TsneResult:
    embedding: np.ndarray
    perplexity: float
    kl_trace: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def final_kl(self) -> float:
        return self.kl_trace[-1][1] if self.kl_trace else float("nan")


def conditional_affinities(
    sq_distances: np.ndarray,
    perplexity: float,
    tol: float = 1e-5,
    max_steps: int = 100,
) -> np.ndarray:
    """Row-stochastic Gaussian affinities whose entropies equal ``log(perplexity)``."""
    n = sq_distances.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(sq_distances[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_steps):
            w = np.exp(-d * beta)
            total = w.sum()
            p = w / total
            entropy = np.log(total) + beta * np.sum(d * p)
            if abs(entropy - target) < tol:
                break
            if entropy > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = p
    return P


def joint_affinities(points: np.ndarray, perplexity: float) -> np.ndarray:
    sq = squareform(pdist(points, metric="sqeuclidean"))
    P = conditional_affinities(sq, perplexity)
    P = (P + P.T) / (2.0 * P.shape[0])
    return np.maximum(P, 1e-12)


def _kl_and_gradient(P: np.ndarray, Y: np.ndarray) -> Tuple[float, np.ndarray]:
    num = 1.0 / (1.0 + squareform(pdist(Y, metric="sqeuclidean")))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    kl = float(np.sum(P * np.log(P / Q)))
    W = (P - Q) * num
    grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
    return kl, grad


def run_tsne(points: np.ndarray, cfg: TsneConfig = TsneConfig()) -> TsneResult:
    """Map *points* to two dimensions; the KL divergence is traced every ``trace_every`` iterations.

    Raises:
        DegenerateInputError: Fewer than 4 points.
        PerplexityError: Perplexity not below ``(n - 1) / 3``.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 4:
        raise DegenerateInputError(f"t-SNE needs at least 4 points, got shape {X.shape}")
    n = X.shape[0]
    perplexity = cfg.perplexity_for(n)
    if perplexity <= 0 or perplexity >= (n - 1) / 3.0:
        raise PerplexityError(f"perplexity {perplexity} must lie in (0, {(n - 1) / 3.0:.3g}) for {n} points")

    t0 = time.perf_counter()
    P = joint_affinities(X, perplexity)
    rng = seeded_rng(cfg.seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    result = TsneResult(Y, perplexity)

    for it in range(cfg.iterations):
        exaggerating = it < cfg.exaggeration_iterations
        momentum = cfg.initial_momentum if exaggerating else cfg.final_momentum
        _, grad = _kl_and_gradient(P * cfg.early_exaggeration if exaggerating else P, Y)
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.clip(gains, cfg.min_gain, None, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if (it + 1) % cfg.trace_every == 0:
            kl, _ = _kl_and_gradient(P, Y)
            result.kl_trace.append((it + 1, kl))
            logger.debug("t-SNE iteration %s: KL %.5f", it + 1, kl)

    result.embedding = Y
    logger.info("t-SNE of %s points (perplexity %s) finished in %.1fs", n, perplexity, time.perf_counter() - t0)
    return result


def tsne(points: np.ndarray, cfg: TsneConfig = TsneConfig()) -> np.ndarray:
    """Two-column layout of *points*."""
    return run_tsne(points, cfg).embedding
