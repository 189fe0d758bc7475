"""Regression trees, random forests and gradient boosted trees.

Trees split on raw integer category codes (or embedded coordinates) with
ordered ``x_j <= s`` rules. Leaves hold the mean target of their region.
Fitted forests and boosted models keep a flat array form of every tree for
vectorised batch prediction.
"""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigError, DataSourceError, EmptyDatasetError, ShapeError
from ..utils.numerics import child_rng, seeded_rng

logger = logging.getLogger(__name__)

__all__ = [
    "TreeNode",
    "TreeConfig",
    "Split",
    "CompiledTree",
    "Forest",
    "BoostModel",
    "best_split",
    "grow_tree",
    "prune",
    "cost_complexity",
    "predict_tree",
    "predict_tree_batch",
    "fit_random_forest",
    "predict_forest",
    "predict_forest_batch",
    "fit_gbt",
    "predict_gbt",
    "predict_gbt_batch",
    "dump_tree",
    "load_tree",
    "dump_model",
    "load_model",
]

TREE_DUMP_VERSION = "tree-dump v1"
FOREST_DUMP_VERSION = "forest-dump v1"
BOOST_DUMP_VERSION = "boost-dump v1"

# Relative tolerance when comparing candidate split costs
TIE_TOL = 1e-12


@dataclass
class TreeNode:
    """A node of a regression tree.

    Leaves have ``feature is None``. Internal nodes keep the mean and count
    of their training region too, so they can be collapsed by pruning.
    """

    value: float
    count: int
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def iter_nodes(self) -> Iterator["TreeNode"]:
        """Depth-first, left before right."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def iter_leaves(self) -> Iterator["TreeNode"]:
        return (n for n in self.iter_nodes() if n.is_leaf)

    @property
    def n_leaves(self) -> int:
        return sum(1 for _ in self.iter_leaves())

    @property
    def n_nodes(self) -> int:
        return sum(1 for _ in self.iter_nodes())

    @property
    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth, self.right.depth)

    def collapse(self) -> None:
        self.feature = None
        self.threshold = None
        self.left = None
        self.right = None


@dataclass(frozen=True)
class TreeConfig:
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    features_per_split: Optional[int] = None
    prune_alpha: Optional[float] = None

    def __post_init__(self) -> None:
        if self.features_per_split == "all":
            object.__setattr__(self, "features_per_split", None)
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise ConfigError(f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ConfigError(f"features_per_split must be >= 1, got {self.features_per_split}")
        if self.prune_alpha is not None and self.prune_alpha < 0:
            raise ConfigError(f"prune_alpha must be >= 0, got {self.prune_alpha}")

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping]) -> "TreeConfig":
        mapping = dict(mapping or {})
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown tree settings: {sorted(unknown)}")
        return cls(**mapping)


class Split(NamedTuple):
    feature: int
    threshold: float
    sse_after: float


def _as_xy(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} rows but {y.shape[0]} targets")
    return X, y


def _sse(y: np.ndarray) -> float:
    if y.size == 0:
        return 0.0
    return float(np.sum((y - y.mean()) ** 2))


# ---------------------------------------------------------------------------
# Greedy growth
# ---------------------------------------------------------------------------

def best_split(
    X: np.ndarray,
    y: np.ndarray,
    features: Optional[Sequence[int]] = None,
    min_samples_leaf: int = 1,
) -> Optional[Split]:
    """Exact best ``x_j <= s`` split over every feature and every midpoint.

    Left/right SSEs for all cut positions of a feature come from cumulative
    sums of the centred targets. Near-equal costs are resolved in favour of
    the lowest feature index, then the lowest split point.

    Returns:
        The winning split with its exact post-split SSE, or None when no
        admissible split strictly lowers the SSE.

    Raises:
        EmptyDatasetError: No samples.
    """
    X, y = _as_xy(X, y)
    n = y.shape[0]
    if n == 0:
        raise EmptyDatasetError("cannot split an empty sample set")
    features = range(X.shape[1]) if features is None else sorted(int(j) for j in features)
    if len(features) == 0:
        raise ShapeError("at least one candidate feature is required")
    if n < 2 or n < 2 * min_samples_leaf:
        return None

    yc = y - y.mean()
    total = float(np.sum(yc ** 2))
    tol = TIE_TOL * max(total, 1.0)
    left_n = np.arange(1, n, dtype=np.float64)
    right_n = n - left_n
    size_ok = (left_n >= min_samples_leaf) & (right_n >= min_samples_leaf)

    best: Optional[Tuple[float, int, float]] = None
    for j in features:
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ys = yc[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        left_sse = csq[:-1] - csum[:-1] ** 2 / left_n
        right_sum = csum[-1] - csum[:-1]
        right_sse = (csq[-1] - csq[:-1]) - right_sum ** 2 / right_n
        cost = left_sse + right_sse
        valid = size_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        cost = np.where(valid, cost, np.inf)
        lowest = float(cost.min())
        k = int(np.flatnonzero(cost <= lowest + tol)[0])
        if best is None or cost[k] < best[0] - tol:
            s = 0.5 * (xs[k] + xs[k + 1])
            if s >= xs[k + 1]:
                s = xs[k]
            best = (float(cost[k]), j, float(s))

    if best is None:
        return None
    _, j, s = best
    mask = X[:, j] <= s
    sse_after = _sse(y[mask]) + _sse(y[~mask])
    if sse_after >= _sse(y) - tol:
        return None
    return Split(j, s, sse_after)


def _feature_subset(
    candidates: np.ndarray, cfg: TreeConfig, rng: Optional[np.random.Generator]
) -> np.ndarray:
    m = cfg.features_per_split
    if m is None or m >= candidates.size:
        return candidates
    if rng is None:
        raise ConfigError("feature subsampling needs a random stream")
    return np.sort(rng.choice(candidates, size=m, replace=False))


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TreeConfig = TreeConfig(),
    rng: Optional[np.random.Generator] = None,
    features: Optional[Sequence[int]] = None,
) -> TreeNode:
    """Grow a CART regression tree greedily.

    Args:
        X: Feature matrix.
        y: Targets.
        cfg: Depth, count and feature-subsampling limits.
        rng: Stream for per-node feature subsets (needed only when
            ``features_per_split`` is below the number of candidates).
        features: Candidate feature columns (all by default).
    """
    X, y = _as_xy(X, y)
    if y.shape[0] == 0:
        raise EmptyDatasetError("cannot grow a tree on an empty sample set")
    candidates = np.arange(X.shape[1]) if features is None else np.sort(np.asarray(features, dtype=int))

    root = TreeNode(float(y.mean()), int(y.shape[0]))
    stack: List[Tuple[TreeNode, np.ndarray, int]] = [(root, np.arange(y.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        if idx.size < cfg.min_samples_split:
            continue
        ys = y[idx]
        if np.all(ys == ys[0]):
            continue
        split = best_split(X[idx], ys, _feature_subset(candidates, cfg, rng), cfg.min_samples_leaf)
        if split is None:
            continue
        mask = X[idx, split.feature] <= split.threshold
        left_idx, right_idx = idx[mask], idx[~mask]
        node.feature = split.feature
        node.threshold = split.threshold
        node.left = TreeNode(float(y[left_idx].mean()), int(left_idx.size))
        node.right = TreeNode(float(y[right_idx].mean()), int(right_idx.size))
        stack.append((node.right, right_idx, depth + 1))
        stack.append((node.left, left_idx, depth + 1))

    if cfg.prune_alpha is not None:
        root = prune(root, cfg.prune_alpha, X, y)
    return root


# ---------------------------------------------------------------------------
# Cost-complexity pruning
# ---------------------------------------------------------------------------

def _node_risks(tree: TreeNode, X: np.ndarray, y: np.ndarray) -> dict:
    """SSE of each node's value against the samples routed through it."""
    risks = {}
    stack = [(tree, np.arange(y.shape[0]))]
    while stack:
        node, idx = stack.pop()
        risks[id(node)] = float(np.sum((y[idx] - node.value) ** 2))
        if not node.is_leaf:
            mask = X[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return risks


def _subtree_risk(node: TreeNode, risks: dict) -> Tuple[float, int]:
    total, leaves = 0.0, 0
    for leaf in node.iter_leaves():
        total += risks[id(leaf)]
        leaves += 1
    return total, leaves


def cost_complexity(tree: TreeNode, alpha: float, X: np.ndarray, y: np.ndarray) -> float:
    """``SSE + alpha * |leaves|`` of *tree* on the given samples."""
    X, y = _as_xy(X, y)
    risk, leaves = _subtree_risk(tree, _node_risks(tree, X, y))
    return risk + alpha * leaves


def prune(tree: TreeNode, alpha: float, X: np.ndarray, y: np.ndarray) -> TreeNode:
    """Weakest-link pruning of a copy of *tree*.

    Node risks are evaluated on the given samples (the training samples, or
    a held-out set). The internal node with the smallest risk increase per
    removed leaf is collapsed while doing so lowers ``SSE + alpha * |T|``.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    X, y = _as_xy(X, y)
    pruned = copy.deepcopy(tree)
    if alpha == 0:
        return pruned
    risks = _node_risks(pruned, X, y)

    collapsed = 0
    while not pruned.is_leaf:
        weakest, weakest_g = None, np.inf
        for node in pruned.iter_nodes():
            if node.is_leaf:
                continue
            sub_risk, leaves = _subtree_risk(node, risks)
            g = (risks[id(node)] - sub_risk) / (leaves - 1)
            if g < weakest_g:
                weakest, weakest_g = node, g
        if weakest_g >= alpha:
            break
        weakest.collapse()
        collapsed += 1
    logger.debug("Pruning with alpha=%s collapsed %s nodes", alpha, collapsed)
    return pruned


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompiledTree:
    """Preorder flat arrays of a tree; ``feature == -1`` marks leaves."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def from_tree(cls, tree: TreeNode) -> "CompiledTree":
        nodes = list(tree.iter_nodes())
        index = {id(n): i for i, n in enumerate(nodes)}
        feature = np.array([-1 if n.is_leaf else n.feature for n in nodes], dtype=np.int64)
        threshold = np.array([0.0 if n.is_leaf else n.threshold for n in nodes])
        left = np.array([-1 if n.is_leaf else index[id(n.left)] for n in nodes], dtype=np.int64)
        right = np.array([-1 if n.is_leaf else index[id(n.right)] for n in nodes], dtype=np.int64)
        value = np.array([n.value for n in nodes])
        return cls(feature, threshold, left, right, value)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            current = node[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])
            active = active[self.feature[node[active]] >= 0]
        return self.value[node]


def predict_tree(tree: TreeNode, x: np.ndarray) -> float:
    """Route ``x`` left when ``x_j <= s``, right otherwise, and return the leaf value."""
    node = tree
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return float(node.value)


def predict_tree_batch(tree: Union[TreeNode, CompiledTree], X: np.ndarray) -> np.ndarray:
    compiled = tree if isinstance(tree, CompiledTree) else CompiledTree.from_tree(tree)
    return compiled.predict(X)


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Forest:
    trees: Tuple[TreeNode, ...]
    bootstrap_size: int
    seed: int
    bootstrap: bool = True
    compiled: Tuple[CompiledTree, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.trees) < 1:
            raise ConfigError("a forest needs at least one tree")
        if not self.compiled:
            object.__setattr__(self, "compiled", tuple(CompiledTree.from_tree(t) for t in self.trees))


def fit_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TreeConfig,
    n_trees: int,
    seed: int,
    bootstrap: bool = True,
    n_jobs: int = 1,
) -> Forest:
    """Bagged trees; tree ``i`` draws its bootstrap and feature subsets from child stream ``i``."""
    X, y = _as_xy(X, y)
    if n_trees < 1:
        raise ConfigError(f"n_trees must be >= 1, got {n_trees}")
    n = y.shape[0]
    if n == 0:
        raise EmptyDatasetError("cannot fit a forest on an empty sample set")

    def _grow(i: int) -> TreeNode:
        rng = child_rng(seed, i)
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        return grow_tree(X[idx], y[idx], cfg, rng)

    t0 = time.perf_counter()
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = tuple(pool.map(_grow, range(n_trees)))
    else:
        trees = tuple(_grow(i) for i in range(n_trees))
    logger.info("Fitted random forest: %s trees on %s rows in %.1fs", n_trees, n, time.perf_counter() - t0)
    return Forest(trees, n, seed, bootstrap)


def predict_forest(f: Forest, x: np.ndarray) -> float:
    return float(np.mean([predict_tree(t, x) for t in f.trees]))


def predict_forest_batch(f: Forest, X: np.ndarray) -> np.ndarray:
    total = np.zeros(np.atleast_2d(X).shape[0])
    for compiled in f.compiled:
        total += compiled.predict(X)
    return total / len(f.compiled)


# ---------------------------------------------------------------------------
# Gradient boosting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoostModel:
    base: float
    shrinkage: float
    trees: Tuple[TreeNode, ...] = ()
    row_subsample: float = 1.0
    col_subsample: float = 1.0
    compiled: Tuple[CompiledTree, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.shrinkage <= 1.0:
            raise ConfigError(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        for name in ("row_subsample", "col_subsample"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {getattr(self, name)}")
        if len(self.compiled) != len(self.trees):
            object.__setattr__(self, "compiled", tuple(CompiledTree.from_tree(t) for t in self.trees))

    @property
    def rounds(self) -> int:
        return len(self.trees)


def _subsample(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n)
    size = max(1, int(round(fraction * n)))
    return np.sort(rng.choice(n, size=size, replace=False))


def fit_gbt(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TreeConfig,
    rounds: int,
    shrinkage: float,
    seed: int,
    row_subsample: float = 1.0,
    col_subsample: float = 1.0,
) -> BoostModel:
    """First-order boosting on squared loss.

    Starting from the mean target, each round grows a tree on the residuals
    ``y - f`` of a row subsample using a column subsample, then adds
    ``shrinkage * tree`` to the model.
    """
    X, y = _as_xy(X, y)
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    n, p = X.shape
    if n == 0:
        raise EmptyDatasetError("cannot boost on an empty sample set")
    # validates the hyper-parameters before the expensive loop
    BoostModel(float(y.mean()), shrinkage, (), row_subsample, col_subsample)

    rng = seeded_rng(seed)
    base = float(y.mean())
    fitted = np.full(n, base)
    trees: List[TreeNode] = []
    compiled: List[CompiledTree] = []
    t0 = time.perf_counter()
    for k in range(rounds):
        rows = _subsample(n, row_subsample, rng)
        cols = _subsample(p, col_subsample, rng)
        residuals = y[rows] - fitted[rows]
        tree = grow_tree(X[rows], residuals, cfg, rng, features=cols)
        flat = CompiledTree.from_tree(tree)
        fitted += shrinkage * flat.predict(X)
        trees.append(tree)
        compiled.append(flat)
        if logger.isEnabledFor(logging.DEBUG) and (k + 1) % 100 == 0:
            logger.debug("round %s/%s train rmse=%.6g", k + 1, rounds, float(np.sqrt(np.mean((y - fitted) ** 2))))
    logger.info("Fitted boosted model: %s rounds on %s rows in %.1fs", rounds, n, time.perf_counter() - t0)
    return BoostModel(base, shrinkage, tuple(trees), row_subsample, col_subsample, tuple(compiled))


def predict_gbt(model: BoostModel, x: np.ndarray) -> float:
    return model.base + model.shrinkage * sum(predict_tree(t, x) for t in model.trees)


def predict_gbt_batch(model: BoostModel, X: np.ndarray) -> np.ndarray:
    total = np.zeros(np.atleast_2d(X).shape[0])
    for compiled in model.compiled:
        total += compiled.predict(X)
    return model.base + model.shrinkage * total


# ---------------------------------------------------------------------------
# Text dumps
# ---------------------------------------------------------------------------

def _tree_lines(tree: TreeNode) -> List[str]:
    lines = []
    for i, node in enumerate(tree.iter_nodes()):
        if node.is_leaf:
            lines.append(f"{i} leaf - {node.value!r} {node.count}")
        else:
            lines.append(f"{i} split {node.feature} {node.threshold!r} {node.count}")
    return lines


def dump_tree(tree: TreeNode) -> str:
    """One node per line, depth first: ``id kind feature threshold|value count``."""
    return "\n".join([f"# {TREE_DUMP_VERSION}"] + _tree_lines(tree)) + "\n"


def _parse_nodes(lines: List[str]) -> TreeNode:
    pos = 0

    def _read() -> TreeNode:
        nonlocal pos
        if pos >= len(lines):
            raise DataSourceError("tree dump ends before the tree is complete")
        parts = lines[pos].split()
        pos += 1
        if len(parts) != 5:
            raise DataSourceError(f"malformed tree dump line: {' '.join(parts)!r}")
        _, kind, feature, number, count = parts
        if kind == "leaf":
            return TreeNode(float(number), int(count))
        if kind != "split":
            raise DataSourceError(f"unknown node kind '{kind}'")
        left = _read()
        right = _read()
        # internal means are the count-weighted means of their children
        value = (left.value * left.count + right.value * right.count) / max(left.count + right.count, 1)
        return TreeNode(value, int(count), int(feature), float(number), left, right)

    root = _read()
    if pos != len(lines):
        raise DataSourceError("trailing lines after tree dump")
    return root


def load_tree(text: str) -> TreeNode:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or lines[0] != f"# {TREE_DUMP_VERSION}":
        raise DataSourceError(f"not a '{TREE_DUMP_VERSION}' dump")
    return _parse_nodes(lines[1:])


def dump_model(model: Union[Forest, BoostModel]) -> str:
    """Text dump of a forest or a boosted model, one ``tree <k>`` block per member."""
    if isinstance(model, Forest):
        header = (f"# {FOREST_DUMP_VERSION} trees={len(model.trees)} bootstrap_size={model.bootstrap_size} "
                  f"seed={model.seed} bootstrap={int(model.bootstrap)}")
    elif isinstance(model, BoostModel):
        header = (f"# {BOOST_DUMP_VERSION} trees={len(model.trees)} base={model.base!r} "
                  f"shrinkage={model.shrinkage!r} row_subsample={model.row_subsample!r} "
                  f"col_subsample={model.col_subsample!r}")
    else:
        raise ConfigError(f"cannot dump {type(model).__name__}")
    lines = [header]
    for k, tree in enumerate(model.trees):
        lines.append(f"tree {k}")
        lines.extend(_tree_lines(tree))
    return "\n".join(lines) + "\n"


def load_model(text: str) -> Union[Forest, BoostModel]:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("# "):
        raise DataSourceError("model dump has no header")
    head = lines[0][2:].split()
    version = " ".join(head[:2])
    fields = dict(item.split("=", 1) for item in head[2:])

    blocks: List[List[str]] = []
    for line in lines[1:]:
        if line.startswith("tree "):
            blocks.append([])
        elif not blocks:
            raise DataSourceError("node line before the first tree block")
        else:
            blocks[-1].append(line)
    trees = tuple(_parse_nodes(b) for b in blocks)
    if len(trees) != int(fields["trees"]):
        raise DataSourceError(f"header announces {fields['trees']} trees, found {len(trees)}")

    if version == FOREST_DUMP_VERSION:
        return Forest(trees, int(fields["bootstrap_size"]), int(fields["seed"]), bool(int(fields["bootstrap"])))
    if version == BOOST_DUMP_VERSION:
        return BoostModel(float(fields["base"]), float(fields["shrinkage"]), trees,
                          float(fields["row_subsample"]), float(fields["col_subsample"]))
    raise DataSourceError(f"unknown model dump version '{version}'")
