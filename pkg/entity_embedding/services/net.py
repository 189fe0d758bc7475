"""Entity-embedding regression network.

Embedding layers (one weight matrix per categorical feature, equivalent to
a linear layer over the one-hot input) feed dense ReLU layers and a single
sigmoid output unit. Training is mini-batch Adam on the mean squared error
of the transformed Sales target. The same class also runs the plain one-hot
network and the one-hot + extra dense layer ablation.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag
from scipy.special import expit

from ..errors import ConfigError, EmptyDatasetError, ModeError, ShapeError, UnseenCategoryError
from ..utils.numerics import seeded_rng
from .tabular import Dataset, FeatureSchema, TargetTransform

logger = logging.getLogger(__name__)

__all__ = [
    "InputMode",
    "EmbeddingMatrix",
    "TrainConfig",
    "AdamState",
    "Network",
    "GradCheckResult",
    "embed_lookup",
    "forward",
    "backward",
    "adam_step",
    "train",
    "train_ensemble",
    "predict_ensemble",
    "ensemble_train_predict",
    "ensemble_predictor",
    "extract_embeddings",
    "average_embeddings",
    "embed_dataset",
    "grad_check",
]

# Rows per forward pass when predicting on large inputs
PREDICT_CHUNK = 4096


class InputMode(str, Enum):
    EMBED = "embed"
    ONE_HOT = "one_hot"
    ONE_HOT_EXTRA_DENSE = "one_hot_extra_dense"


@dataclass
class EmbeddingMatrix:
    """Learned embedding of one feature: row ``alpha`` embeds category ``alpha``."""

    feature_index: int
    weights: np.ndarray
    name: str = ""
    labels: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"embedding weights must be 2-D, got shape {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ShapeError(f"embedding for feature {self.feature_index} has non-finite entries")

    @property
    def cardinality(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])


def embed_lookup(e: EmbeddingMatrix, category: int, *, fallback_mean: bool = False) -> np.ndarray:
    """Return the embedding vector of *category* (row ``category`` of the weights).

    Args:
        e: Embedding matrix of one feature.
        category: Category index.
        fallback_mean: Return the mean of all rows for an out-of-range index
            instead of raising.

    Raises:
        UnseenCategoryError: Index outside ``[0, m_i)`` and no fallback.
    """
    if 0 <= category < e.cardinality:
        return e.weights[category].copy()
    if fallback_mean:
        return e.weights.mean(axis=0)
    raise UnseenCategoryError(e.feature_index, int(category), e.cardinality)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    ensemble_size: int = 5
    seed_stride: int = 1
    hidden_sizes: Tuple[int, ...] = (1000, 500)
    input_mode: InputMode = InputMode.EMBED
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    embedding_init: float = 0.05
    loss: str = "mse"
    unseen_fallback: bool = False
    n_jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_mode", InputMode(self.input_mode))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.ensemble_size < 1:
            raise ConfigError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden sizes must be positive, got {self.hidden_sizes}")
        if self.loss != "mse":
            raise ConfigError(f"unsupported loss '{self.loss}'")

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping]) -> "TrainConfig":
        mapping = dict(mapping or {})
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown net settings: {sorted(unknown)}")
        return cls(**mapping)


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "AdamState":
        return cls(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)


def adam_step(
    s: AdamState,
    params: Dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Apply one bias-corrected Adam update to *params* in place.

    Raises:
        ShapeError: Gradient keys or shapes do not mirror the parameters.
    """
    if set(params) != set(grads):
        raise ShapeError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    for name, p in params.items():
        if np.shape(grads[name]) != p.shape:
            raise ShapeError(f"gradient for '{name}' has shape {np.shape(grads[name])}, expected {p.shape}")

    s.t += 1
    bc1 = 1.0 - s.beta1 ** s.t
    bc2 = 1.0 - s.beta2 ** s.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in s.m:
            s.m[name] = np.zeros_like(p)
            s.v[name] = np.zeros_like(p)
        s.m[name] *= s.beta1
        s.m[name] += (1.0 - s.beta1) * g
        s.v[name] *= s.beta2
        s.v[name] += (1.0 - s.beta2) * (g * g)
        p -= s.learning_rate * (s.m[name] / bc1) / (np.sqrt(s.v[name] / bc2) + s.epsilon)
    return params, s


@dataclass
class _ForwardCache:
    inputs: np.ndarray
    pre_activations: List[np.ndarray]
    activations: List[np.ndarray]
    output: np.ndarray


class Network:
    """Embedding (or one-hot) input, dense ReLU stack, sigmoid output.

    Parameters live in ``params`` under stable names: ``embedding_<i>``,
    ``extra_weight``/``extra_bias`` (ablation only), ``dense_<l>_weight``/
    ``dense_<l>_bias`` and ``output_weight``/``output_bias``.
    """

    def __init__(
        self,
        cardinalities: Sequence[int],
        embedding_dims: Sequence[int],
        hidden_sizes: Sequence[int] = (1000, 500),
        input_mode: InputMode | str = InputMode.EMBED,
        params: Optional[Dict[str, np.ndarray]] = None,
        feature_names: Optional[Sequence[str]] = None,
        feature_labels: Optional[Sequence[Tuple[str, ...]]] = None,
        unseen_fallback: bool = False,
        transform: Optional[TargetTransform] = None,
    ) -> None:
        if len(cardinalities) != len(embedding_dims):
            raise ShapeError("one embedding dim is required per feature")
        self.cardinalities = [int(m) for m in cardinalities]
        self.embedding_dims = [int(d) for d in embedding_dims]
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.input_mode = InputMode(input_mode)
        self.feature_names = list(feature_names or [f"x{i}" for i in range(len(self.cardinalities))])
        self.feature_labels = list(feature_labels or [() for _ in self.cardinalities])
        self.unseen_fallback = unseen_fallback
        self.transform = transform
        self.history: List[float] = []
        self.params: Dict[str, np.ndarray] = {}
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            self._check_shapes()

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def initialize(cls, schema: FeatureSchema, cfg: TrainConfig, rng: np.random.Generator) -> "Network":
        """Seeded initialisation: Glorot-uniform dense layers, uniform ±init embeddings."""
        net = cls(
            schema.cardinalities,
            schema.embedding_dims,
            cfg.hidden_sizes,
            cfg.input_mode,
            feature_names=schema.names,
            feature_labels=[f.labels for f in schema.features],
            unseen_fallback=cfg.unseen_fallback,
        )
        params: Dict[str, np.ndarray] = {}
        if net.input_mode is InputMode.EMBED:
            for i, (m, d) in enumerate(zip(net.cardinalities, net.embedding_dims)):
                params[f"embedding_{i}"] = rng.uniform(-cfg.embedding_init, cfg.embedding_init, size=(m, d))
        for name, (fan_in, fan_out) in zip(net.layer_names, net.layer_shapes):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"{name}_weight"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            params[f"{name}_bias"] = np.zeros(fan_out)
        net.params = params
        return net

    @property
    def input_width(self) -> int:
        if self.input_mode is InputMode.EMBED:
            return sum(self.embedding_dims)
        return sum(self.cardinalities)

    @property
    def layer_names(self) -> List[str]:
        names = ["extra"] if self.input_mode is InputMode.ONE_HOT_EXTRA_DENSE else []
        names += [f"dense_{l}" for l in range(len(self.hidden_sizes))]
        return names + ["output"]

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        widths = [self.input_width]
        if self.input_mode is InputMode.ONE_HOT_EXTRA_DENSE:
            widths.append(sum(self.embedding_dims))
        widths += list(self.hidden_sizes) + [1]
        return list(zip(widths[:-1], widths[1:]))

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes: Dict[str, Tuple[int, ...]] = {}
        if self.input_mode is InputMode.EMBED:
            for i, (m, d) in enumerate(zip(self.cardinalities, self.embedding_dims)):
                shapes[f"embedding_{i}"] = (m, d)
        for name, (fan_in, fan_out) in zip(self.layer_names, self.layer_shapes):
            shapes[f"{name}_weight"] = (fan_in, fan_out)
            shapes[f"{name}_bias"] = (fan_out,)
        return shapes

    def _check_shapes(self) -> None:
        expected = self.expected_shapes()
        if set(expected) != set(self.params):
            raise ShapeError(f"parameters {sorted(self.params)} do not match layout {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"parameter '{name}' has shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "Network":
        other = Network(
            self.cardinalities, self.embedding_dims, self.hidden_sizes, self.input_mode,
            params=self.params, feature_names=self.feature_names, feature_labels=self.feature_labels,
            unseen_fallback=self.unseen_fallback, transform=self.transform,
        )
        other.history = list(self.history)
        return other

    def manifest(self) -> dict:
        return {
            "cardinalities": self.cardinalities,
            "embedding_dims": self.embedding_dims,
            "hidden_sizes": list(self.hidden_sizes),
            "input_mode": self.input_mode.value,
            "feature_names": self.feature_names,
            "feature_labels": [list(l) for l in self.feature_labels],
            "unseen_fallback": self.unseen_fallback,
            "sale_max": None if self.transform is None else self.transform.sale_max,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
        }

    @classmethod
    def from_manifest(cls, manifest: Mapping, params: Dict[str, np.ndarray]) -> "Network":
        sale_max = manifest.get("sale_max")
        return cls(
            manifest["cardinalities"],
            manifest["embedding_dims"],
            manifest["hidden_sizes"],
            manifest["input_mode"],
            params=params,
            feature_names=manifest.get("feature_names"),
            feature_labels=[tuple(l) for l in manifest.get("feature_labels", [])] or None,
            unseen_fallback=bool(manifest.get("unseen_fallback", False)),
            transform=None if sale_max is None else TargetTransform(float(sale_max)),
        )

    def as_one_hot(self) -> "Network":
        """Equivalent one-hot network: the block-diagonal embedding matrix is folded into the first layer."""
        if self.input_mode is not InputMode.EMBED:
            raise ModeError("only embed-mode networks can be folded into one-hot form")
        first = self.layer_names[0]
        blocks = block_diag(*[self.params[f"embedding_{i}"] for i in range(len(self.cardinalities))])
        params = {k: v.copy() for k, v in self.params.items() if not k.startswith("embedding_")}
        params[f"{first}_weight"] = blocks @ self.params[f"{first}_weight"]
        return Network(
            self.cardinalities, self.embedding_dims, self.hidden_sizes, InputMode.ONE_HOT,
            params=params, feature_names=self.feature_names, feature_labels=self.feature_labels,
            unseen_fallback=self.unseen_fallback, transform=self.transform,
        )

    # ------------------------------------------------------------------
    # Forward / backward
    # ------------------------------------------------------------------

    def _codes(self, x: np.ndarray) -> np.ndarray:
        codes = np.asarray(x, dtype=np.int64)
        if codes.ndim == 1:
            codes = codes[None, :]
        if codes.shape[1] != len(self.cardinalities):
            raise ShapeError(f"expected {len(self.cardinalities)} features, got {codes.shape[1]}")
        return codes

    def _input(self, codes: np.ndarray, params: Mapping[str, np.ndarray], allow_fallback: bool) -> np.ndarray:
        parts = []
        for i, m in enumerate(self.cardinalities):
            col = codes[:, i]
            unseen = (col < 0) | (col >= m)
            if unseen.any() and not (allow_fallback and self.unseen_fallback):
                raise UnseenCategoryError(i, int(col[unseen][0]), m)
            safe = np.where(unseen, 0, col)
            if self.input_mode is InputMode.EMBED:
                table = params[f"embedding_{i}"]
                block = table[safe]
                if unseen.any():
                    block[unseen] = table.mean(axis=0)
            else:
                block = np.zeros((codes.shape[0], m))
                block[np.arange(codes.shape[0]), safe] = 1.0
                if unseen.any():
                    block[unseen] = 1.0 / m
            parts.append(block)
        return np.concatenate(parts, axis=1)

    def _forward(
        self,
        x: np.ndarray,
        params: Optional[Mapping[str, np.ndarray]] = None,
        allow_fallback: bool = True,
    ) -> _ForwardCache:
        params = self.params if params is None else params
        codes = self._codes(x)
        h = self._input(codes, params, allow_fallback)
        inputs = h
        pres: List[np.ndarray] = []
        acts: List[np.ndarray] = [h]
        for name in self.layer_names[:-1]:
            z = h @ params[f"{name}_weight"] + params[f"{name}_bias"]
            h = np.maximum(z, 0.0)
            pres.append(z)
            acts.append(h)
        z_out = (h @ params["output_weight"] + params["output_bias"])[:, 0]
        return _ForwardCache(inputs, pres, acts, expit(z_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Sigmoid-scale outputs for a code matrix (or a single code vector)."""
        codes = self._codes(x)
        out = np.empty(codes.shape[0])
        for start in range(0, codes.shape[0], PREDICT_CHUNK):
            out[start:start + PREDICT_CHUNK] = self._forward(codes[start:start + PREDICT_CHUNK]).output
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def predict_sales(self, x: np.ndarray) -> np.ndarray:
        if self.transform is None:
            raise ModeError("network has no target transform attached")
        return self.transform.inverse(self.forward(x))

    def loss(self, x: np.ndarray, targets: np.ndarray) -> float:
        out = self.forward(x)
        return float(np.mean((out - np.asarray(targets, dtype=np.float64)) ** 2))

    def backward(self, x: np.ndarray, targets: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        """Mean squared error on the batch and its gradient for every parameter."""
        codes = self._codes(x)
        t = np.asarray(targets, dtype=np.float64).ravel()
        if codes.shape[0] == 0:
            raise EmptyDatasetError("backward needs a nonempty batch")
        if t.shape[0] != codes.shape[0]:
            raise ShapeError("one target per sample is required")
        cache = self._forward(codes, allow_fallback=False)
        n = codes.shape[0]
        out = cache.output
        loss = float(np.mean((out - t) ** 2))

        grads: Dict[str, np.ndarray] = {}
        dz = (2.0 / n) * (out - t) * out * (1.0 - out)
        grads["output_weight"] = cache.activations[-1].T @ dz[:, None]
        grads["output_bias"] = np.array([dz.sum()])
        dh = dz[:, None] @ self.params["output_weight"].T
        hidden = self.layer_names[:-1]
        for l in range(len(hidden) - 1, -1, -1):
            name = hidden[l]
            dpre = dh * (cache.pre_activations[l] > 0.0)
            grads[f"{name}_weight"] = cache.activations[l].T @ dpre
            grads[f"{name}_bias"] = dpre.sum(axis=0)
            dh = dpre @ self.params[f"{name}_weight"].T

        if self.input_mode is InputMode.EMBED:
            offset = 0
            for i, (m, d) in enumerate(zip(self.cardinalities, self.embedding_dims)):
                g = np.zeros((m, d))
                np.add.at(g, codes[:, i], dh[:, offset:offset + d])
                grads[f"embedding_{i}"] = g
                offset += d
        return loss, grads


def forward(n: Network, x: np.ndarray) -> np.ndarray | float:
    """Sigmoid-scale prediction; a scalar for a single code vector."""
    out = n.forward(x)
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def backward(n: Network, x: np.ndarray, targets: np.ndarray) -> Dict[str, np.ndarray]:
    return n.backward(x, targets)[1]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(
    cfg: TrainConfig,
    schema: FeatureSchema,
    train_set: Dataset,
    transform: TargetTransform,
) -> Network:
    """Train one network with seeded init, seeded per-epoch shuffles and Adam.

    The returned network carries ``history``: the full training-set loss at
    initialisation followed by the loss after each epoch.
    """
    if len(train_set) == 0:
        raise EmptyDatasetError("training set is empty")
    rng = seeded_rng(cfg.seed)
    net = Network.initialize(schema, cfg, rng)
    net.transform = transform
    x = train_set.x
    targets = transform.transform(train_set.y)
    state = AdamState.from_config(cfg)
    n = len(train_set)

    t0 = time.perf_counter()
    net.history = [net.loss(x, targets)]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            _, grads = net.backward(x[idx], targets[idx])
            adam_step(state, net.params, grads)
        net.history.append(net.loss(x, targets))
        logger.debug("seed=%s epoch %s/%s loss=%.6g", cfg.seed, epoch + 1, cfg.epochs, net.history[-1])
    logger.info("Trained %s network (seed %s) on %s rows in %.1fs, loss %.5g -> %.5g",
                net.input_mode.value, cfg.seed, n, time.perf_counter() - t0,
                net.history[0], net.history[-1])
    return net


def _member_configs(cfg: TrainConfig) -> List[TrainConfig]:
    return [replace(cfg, seed=cfg.seed + k * cfg.seed_stride) for k in range(cfg.ensemble_size)]


def train_ensemble(
    cfg: TrainConfig,
    schema: FeatureSchema,
    train_set: Dataset,
    transform: TargetTransform,
) -> List[Network]:
    """Train ``ensemble_size`` networks with seeds ``seed + k * seed_stride``."""
    members = _member_configs(cfg)
    if cfg.n_jobs > 1 and len(members) > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            return list(pool.map(lambda c: train(c, schema, train_set, transform), members))
    return [train(c, schema, train_set, transform) for c in members]


def predict_ensemble(networks: Sequence[Network], x: np.ndarray, transform: TargetTransform) -> np.ndarray:
    """Inverse transform of the mean sigmoid-scale output of all members."""
    if not networks:
        raise ConfigError("ensemble is empty")
    mean = np.mean([net.forward(x) for net in networks], axis=0)
    return transform.inverse(mean)


def ensemble_train_predict(
    cfg: TrainConfig,
    schema: FeatureSchema,
    train_set: Dataset,
    test_set: Dataset,
    transform: TargetTransform,
) -> np.ndarray:
    """Train the ensemble and return Sales-scale predictions for *test_set*."""
    networks = train_ensemble(cfg, schema, train_set, transform)
    return predict_ensemble(networks, test_set.x, transform)


def ensemble_predictor(
    networks: Sequence[Network],
    scale: str = "transformed",
    transform: Optional[TargetTransform] = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """Callable mapping code matrices to ensemble outputs on the chosen scale."""
    if scale not in ("transformed", "sales"):
        raise ConfigError(f"unknown prediction scale '{scale}'")
    transform = transform or networks[0].transform
    if scale == "sales" and transform is None:
        raise ModeError("sales scale needs a target transform")

    def predict(x: np.ndarray) -> np.ndarray:
        mean = np.mean([net.forward(x) for net in networks], axis=0)
        return mean if scale == "transformed" else transform.inverse(mean)

    return predict


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

def extract_embeddings(n: Network) -> List[EmbeddingMatrix]:
    """Copies of the embedding weight matrices, in schema order."""
    if n.input_mode is not InputMode.EMBED:
        raise ModeError(f"network in '{n.input_mode.value}' mode has no embedding layers")
    return [
        EmbeddingMatrix(i, n.params[f"embedding_{i}"].copy(), n.feature_names[i], tuple(n.feature_labels[i]))
        for i in range(len(n.cardinalities))
    ]


def average_embeddings(networks: Sequence[Network]) -> List[EmbeddingMatrix]:
    """Element-wise mean of the embedding matrices of several members."""
    per_member = [extract_embeddings(net) for net in networks]
    return [
        EmbeddingMatrix(first.feature_index, np.mean([m[i].weights for m in per_member], axis=0),
                        first.name, first.labels)
        for i, first in enumerate(per_member[0])
    ]


def embed_dataset(d: Dataset | np.ndarray, embs: Sequence[EmbeddingMatrix]) -> np.ndarray:
    """Replace each categorical code by its embedding row; columns follow schema order."""
    codes = d.x if isinstance(d, Dataset) else np.asarray(d, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[1] != len(embs):
        raise ShapeError(f"expected {len(embs)} feature columns, got shape {codes.shape}")
    if isinstance(d, Dataset):
        for card, emb in zip(d.schema.cardinalities, embs):
            if card != emb.cardinality:
                raise ShapeError(
                    f"feature {emb.feature_index}: cardinality {card} but embedding has {emb.cardinality} rows"
                )
    for i, emb in enumerate(embs):
        col = codes[:, i]
        if col.size and (col.min() < 0 or col.max() >= emb.cardinality):
            raise UnseenCategoryError(emb.feature_index, int(col[(col < 0) | (col >= emb.cardinality)][0]),
                                      emb.cardinality)
    return np.concatenate([emb.weights[codes[:, i]] for i, emb in enumerate(embs)], axis=1)


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_relative_error: float
    checked: int
    kinks: List[Tuple[str, Tuple[int, ...]]] = field(default_factory=list)


def _relu_pattern(cache: _ForwardCache) -> List[np.ndarray]:
    return [z > 0.0 for z in cache.pre_activations]


def grad_check(
    n: Network,
    x: np.ndarray | Tuple[np.ndarray, np.ndarray],
    targets: Optional[np.ndarray] = None,
    h: float = 1e-5,
    floor: float = 1e-7,
) -> GradCheckResult:
    """Compare backprop gradients with central differences for every scalar parameter.

    The batch is either passed as a ``(codes, targets)`` pair in *x* or as
    separate *x* and *targets* arguments.

    A parameter whose ``±h`` perturbation changes any ReLU on/off state is
    sitting on a kink; it is reported in ``kinks`` and left out of the max.
    The relative error is ``|a - f| / max(|a|, |f|, floor)``.
    """
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    if targets is None:
        if not isinstance(x, tuple) or len(x) != 2:
            raise ShapeError("grad_check needs targets, either separately or as a (codes, targets) pair")
        x, targets = x
    codes = n._codes(x)
    t = np.asarray(targets, dtype=np.float64).ravel()
    _, analytic = n.backward(codes, t)
    base_pattern = _relu_pattern(n._forward(codes, allow_fallback=False))

    def _loss(params: Mapping[str, np.ndarray]) -> Tuple[float, List[np.ndarray]]:
        cache = n._forward(codes, params, allow_fallback=False)
        return float(np.mean((cache.output - t) ** 2)), _relu_pattern(cache)

    worst = 0.0
    checked = 0
    kinks: List[Tuple[str, Tuple[int, ...]]] = []
    for name, p in n.params.items():
        for idx in np.ndindex(p.shape):
            trial = dict(n.params)
            original = p[idx]
            plus = p.copy()
            plus[idx] = original + h
            trial[name] = plus
            f_plus, pat_plus = _loss(trial)
            minus = p.copy()
            minus[idx] = original - h
            trial[name] = minus
            f_minus, pat_minus = _loss(trial)
            if any(not (np.array_equal(a, b) and np.array_equal(a, c))
                   for a, b, c in zip(base_pattern, pat_plus, pat_minus)):
                kinks.append((name, tuple(int(i) for i in idx)))
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[name][idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, rel)
            checked += 1
    if kinks:
        logger.info("Gradient check skipped %s parameters on ReLU kinks", len(kinks))
    return GradCheckResult(worst, checked, kinks)
