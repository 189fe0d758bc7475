"""Benchmark and analysis pipelines.

``run_benchmark`` reproduces the with/without entity embedding comparison:
split, optional sparsification, an embed-mode network ensemble trained on
the training split only, then every requested method evaluated on its
native representation and on the learned embeddings. ``run_analysis``
writes the plot data and summary statistics describing the learned
embedding spaces.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .. import __version__
from ..errors import ConfigError, DataSourceError, StepError
from ..utils.color_utils import label_palette
from ..utils.data_source import resolve_source
from ..utils.numerics import mardia, pca
from ..utils.plot_render import PlotStyle, render_scatter
from ..utils.serialization import load_dataset, write_embeddings, write_json, write_plot_csv
from . import geometry
from .knn import KnnConfig, fit_knn, predict_knn_batch
from .net import (
    EmbeddingMatrix,
    InputMode,
    Network,
    TrainConfig,
    average_embeddings,
    embed_dataset,
    ensemble_predictor,
    extract_embeddings,
    predict_ensemble,
    train_ensemble,
)
from .synthetic import SyntheticConfig, SyntheticTruth, generate_synthetic
from .tabular import (
    ColumnMap,
    Dataset,
    EvalReport,
    SplitMode,
    TargetTransform,
    category_mean_sales,
    date_range_of,
    ingest_csv,
    mape,
    sparsify,
    split,
)
from .trees import TreeConfig, fit_gbt, fit_random_forest, predict_forest_batch, predict_gbt_batch
from .tsne import TsneConfig, run_tsne

logger = logging.getLogger(__name__)

__all__ = [
    "Method",
    "Representation",
    "EmbeddingSource",
    "ForestSettings",
    "GbtSettings",
    "BenchmarkConfig",
    "BenchmarkReport",
    "AnalysisFlag",
    "AnalysisConfig",
    "AnalysisSummary",
    "load_data",
    "train_networks",
    "select_embeddings",
    "run_benchmark",
    "render_table",
    "write_report",
    "run_analysis",
    "export_embeddings",
]

ProgressCallback = Optional[Callable[[str], None]]


class Method(str, Enum):
    KNN = "knn"
    RANDOM_FOREST = "random_forest"
    GBT = "gbt"
    NN = "nn"
    NN_EXTRA_DENSE = "nn_extra_dense"


class Representation(str, Enum):
    INTEGER = "integer"
    ONE_HOT = "one_hot"
    EMBEDDED = "embedded"


class EmbeddingSource(str, Enum):
    FIRST = "first"
    AVERAGE = "average"


# How each method sees the categorical features without embeddings
NATIVE_REPRESENTATION: Dict[Method, Representation] = {
    Method.KNN: Representation.ONE_HOT,
    Method.RANDOM_FOREST: Representation.INTEGER,
    Method.GBT: Representation.INTEGER,
    Method.NN: Representation.ONE_HOT,
    Method.NN_EXTRA_DENSE: Representation.ONE_HOT,
}


def _strict(cls, mapping: Optional[Mapping], section: str) -> dict:
    mapping = dict(mapping or {})
    unknown = set(mapping) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {section} settings: {sorted(unknown)}")
    return mapping


@dataclass(frozen=True)
class ForestSettings:
    n_trees: int = 200
    max_depth: Optional[int] = 35
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    features_per_split: Optional[int] = None
    bootstrap: bool = True
    n_jobs: int = 1

    @property
    def tree(self) -> TreeConfig:
        return TreeConfig(self.max_depth, self.min_samples_split, self.min_samples_leaf, self.features_per_split)

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping]) -> "ForestSettings":
        return cls(**_strict(cls, mapping, "random_forest"))


@dataclass(frozen=True)
class GbtSettings:
    rounds: int = 3000
    shrinkage: float = 0.02
    max_depth: Optional[int] = 10
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    row_subsample: float = 0.7
    col_subsample: float = 0.7

    @property
    def tree(self) -> TreeConfig:
        return TreeConfig(self.max_depth, self.min_samples_split, self.min_samples_leaf)

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping]) -> "GbtSettings":
        return cls(**_strict(cls, mapping, "gbt"))


@dataclass(frozen=True)
class BenchmarkConfig:
    split_mode: SplitMode = SplitMode.SHUFFLED
    test_fraction: float = 0.10
    sparsify: Optional[int] = 200000
    methods: Tuple[Method, ...] = (Method.KNN, Method.RANDOM_FOREST, Method.GBT, Method.NN)
    with_embeddings: bool = True
    without_embeddings: bool = True
    embedding_source: EmbeddingSource = EmbeddingSource.FIRST
    seed: int = 0
    net: TrainConfig = field(default_factory=TrainConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    forest: ForestSettings = field(default_factory=ForestSettings)
    gbt: GbtSettings = field(default_factory=GbtSettings)

    def __post_init__(self) -> None:
        object.__setattr__(self, "split_mode", SplitMode(self.split_mode))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(self, "embedding_source", EmbeddingSource(self.embedding_source))
        if not self.methods:
            raise ConfigError("at least one method is required")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError(f"duplicate methods in {[m.value for m in self.methods]}")
        if not (self.with_embeddings or self.without_embeddings):
            raise ConfigError("enable at least one of with_embeddings / without_embeddings")
        if self.sparsify is not None and self.sparsify < 1:
            raise ConfigError(f"sparsify must be positive or null, got {self.sparsify}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "BenchmarkConfig":
        """Build from the ``benchmark``, ``net``, ``knn``, ``random_forest`` and ``gbt`` sections."""
        section = _strict(cls, config.get("benchmark"), "benchmark")
        for nested in ("net", "knn", "forest", "gbt"):
            if nested in section:
                raise ConfigError(f"'{nested}' belongs in its own config section, not under 'benchmark'")
        return cls(
            **section,
            net=TrainConfig.from_mapping(config.get("net")),
            knn=KnnConfig.from_mapping(config.get("knn")),
            forest=ForestSettings.from_mapping(config.get("random_forest")),
            gbt=GbtSettings.from_mapping(config.get("gbt")),
        )

    def to_dict(self) -> dict:
        payload = asdict(self)
        return json.loads(json.dumps(payload, default=lambda v: v.value if isinstance(v, Enum) else str(v)))


@dataclass
class BenchmarkReport:
    results: List[EvalReport]
    config: Dict[str, Any]
    version: str
    n_train: int
    n_test: int
    bayes_floor: Optional[float] = None
    timestamp: str = ""

    def get(self, method: Union[Method, str], with_embeddings: bool) -> EvalReport:
        name = Method(method).value
        for r in self.results:
            if r.method == name and r.with_embeddings == with_embeddings:
                return r
        raise KeyError(f"no result for {name} ({'with' if with_embeddings else 'without'} embeddings)")

    def to_dict(self) -> dict:
        """Deterministic part under ``report``; wall-clock data under ``run``."""
        results = []
        for r in self.results:
            entry = r.to_dict()
            entry.pop("runtime_s")
            results.append(entry)
        return {
            "report": {
                "version": self.version,
                "n_train": self.n_train,
                "n_test": self.n_test,
                "bayes_floor": self.bayes_floor,
                "results": results,
                "config": self.config,
            },
            "run": {
                "timestamp": self.timestamp,
                "runtimes_s": {f"{r.method}/{'ee' if r.with_embeddings else 'native'}": r.runtime_s
                               for r in self.results},
            },
        }


def _version_stamp(config: Mapping[str, Any]) -> str:
    digest = hashlib.sha1(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:10]
    return f"{__version__}+{digest}"


@contextmanager
def _step(name: str, progress_callback: ProgressCallback = None) -> Iterator[None]:
    if progress_callback:
        progress_callback(f"{name}...")
    logger.info("Step %s...", name)
    t0 = time.perf_counter()
    try:
        yield
    except StepError:
        raise
    except Exception as exc:
        logger.error("Step '%s' failed: %s", name, exc, exc_info=True)
        raise StepError(name, exc) from exc
    logger.info("Step %s finished in %.1fs", name, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Data and networks
# ---------------------------------------------------------------------------

def load_data(
    source: Optional[Union[str, Path]],
    config: Mapping[str, Any],
) -> Tuple[Dataset, Optional[SyntheticTruth]]:
    """Dataset from a CSV path or URL, a cached ``.npz`` dataset, or the synthetic generator.

    ``None`` or ``"synthetic"`` selects the generator configured in the
    ``synthetic`` section.
    """
    tabular_cfg = config.get("tabular", {})
    dims = tabular_cfg.get("embedding_dims")
    if source is None or str(source) == "synthetic":
        return generate_synthetic(SyntheticConfig.from_mapping(config.get("synthetic")), dims)
    if str(source).endswith(".npz"):
        return load_dataset(source), None
    path = resolve_source(source, tabular_cfg.get("cache_dir", ".cache"))
    return ingest_csv(path, ColumnMap.from_mapping(tabular_cfg.get("columns")), dims), None


def train_networks(
    net_cfg: TrainConfig,
    train: Dataset,
    mode: InputMode = InputMode.EMBED,
) -> Tuple[List[Network], TargetTransform]:
    """Ensemble of *mode* networks and the target transform fitted on *train*."""
    transform = TargetTransform.fit(train)
    networks = train_ensemble(replace(net_cfg, input_mode=mode), train.schema, train, transform)
    return networks, transform


def select_embeddings(networks: Sequence[Network], source: EmbeddingSource) -> List[EmbeddingMatrix]:
    if EmbeddingSource(source) is EmbeddingSource.AVERAGE:
        return average_embeddings(networks)
    return extract_embeddings(networks[0])


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def _fit_predict_baseline(
    method: Method,
    cfg: BenchmarkConfig,
    train_x: np.ndarray,
    test_x: np.ndarray,
    log_y: np.ndarray,
    categorical: bool,
) -> np.ndarray:
    """Baselines learn log(Sales); predictions are mapped back to Sales."""
    if method is Method.KNN:
        model = fit_knn(train_x, log_y, cfg.knn, categorical=categorical)
        return np.exp(predict_knn_batch(model, test_x))
    if method is Method.RANDOM_FOREST:
        s = cfg.forest
        forest = fit_random_forest(train_x, log_y, s.tree, s.n_trees, cfg.seed, s.bootstrap, s.n_jobs)
        return np.exp(predict_forest_batch(forest, test_x))
    if method is Method.GBT:
        s = cfg.gbt
        model = fit_gbt(train_x, log_y, s.tree, s.rounds, s.shrinkage, cfg.seed, s.row_subsample, s.col_subsample)
        return np.exp(predict_gbt_batch(model, test_x))
    raise ConfigError(f"{method.value} is not a baseline method")


def run_benchmark(
    cfg: BenchmarkConfig,
    data: Dataset,
    truth: Optional[SyntheticTruth] = None,
    progress_callback: ProgressCallback = None,
) -> BenchmarkReport:
    """Run the full comparison and return one EvalReport per (method, representation).

    Raises:
        StepError: Any sub-step failed; ``step`` names it.
    """
    logger.info("Starting benchmark: methods=%s split=%s rows=%s",
                [m.value for m in cfg.methods], cfg.split_mode.value, len(data))
    config_echo = cfg.to_dict()
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug("Benchmark config: %s", json.dumps(config_echo, sort_keys=True))

    with _step("split", progress_callback):
        train, test = split(data, cfg.split_mode, cfg.test_fraction, cfg.seed)
    with _step("sparsify", progress_callback):
        if cfg.sparsify is not None:
            if cfg.sparsify < len(train):
                train = sparsify(train, cfg.sparsify, cfg.seed)
            else:
                logger.warning("Sparsify size %s not below training size %s; keeping all rows",
                               cfg.sparsify, len(train))

    nn_wanted = Method.NN in cfg.methods and cfg.with_embeddings
    networks: List[Network] = []
    transform = TargetTransform.fit(train)
    if cfg.with_embeddings or nn_wanted:
        with _step("train_nn", progress_callback):
            t0 = time.perf_counter()
            networks, transform = train_networks(cfg.net, train, InputMode.EMBED)
            nn_runtime = time.perf_counter() - t0
        with _step("embed_features", progress_callback):
            embs = select_embeddings(networks, cfg.embedding_source)
            emb_train = embed_dataset(train, embs)
            emb_test = embed_dataset(test, embs)

    log_y = np.log(train.y)
    results: List[EvalReport] = []

    def _record(method: Method, with_ee: bool, preds: np.ndarray, runtime: float) -> None:
        report = EvalReport(method.value, mape(preds, test.y), with_ee, cfg.split_mode, cfg.seed, runtime)
        logger.info("%s (%s): MAPE %.4f", method.value, "EE" if with_ee else "native", report.mape)
        results.append(report)

    for method in cfg.methods:
        if cfg.without_embeddings:
            name = f"{method.value}/{NATIVE_REPRESENTATION[method].value}"
            with _step(name, progress_callback):
                t0 = time.perf_counter()
                if method is Method.NN:
                    members, tf = train_networks(cfg.net, train, InputMode.ONE_HOT)
                    preds = predict_ensemble(members, test.x, tf)
                elif method is Method.NN_EXTRA_DENSE:
                    members, tf = train_networks(cfg.net, train, InputMode.ONE_HOT_EXTRA_DENSE)
                    preds = predict_ensemble(members, test.x, tf)
                else:
                    preds = _fit_predict_baseline(method, cfg, train.x, test.x, log_y, categorical=True)
                _record(method, False, preds, time.perf_counter() - t0)
        if cfg.with_embeddings and method is not Method.NN_EXTRA_DENSE:
            name = f"{method.value}/{Representation.EMBEDDED.value}"
            with _step(name, progress_callback):
                t0 = time.perf_counter()
                if method is Method.NN:
                    preds = predict_ensemble(networks, test.x, transform)
                    runtime = nn_runtime + time.perf_counter() - t0
                else:
                    preds = _fit_predict_baseline(method, cfg, emb_train, emb_test, log_y, categorical=False)
                    runtime = time.perf_counter() - t0
                _record(method, True, preds, runtime)

    report = BenchmarkReport(
        results=results,
        config=config_echo,
        version=_version_stamp(config_echo),
        n_train=len(train),
        n_test=len(test),
        bayes_floor=None if truth is None else truth.bayes_floor,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    if progress_callback:
        progress_callback("Benchmark finished.")
    logger.info("Benchmark finished.")
    return report


def render_table(report: BenchmarkReport) -> str:
    """Plain-text table: one row per method, MAPE without and with embeddings."""
    methods = list(dict.fromkeys(r.method for r in report.results))

    def _cell(method: str, with_ee: bool) -> str:
        for r in report.results:
            if r.method == method and r.with_embeddings == with_ee:
                return f"{r.mape:.4f}"
        return "-"

    rows = [("method", "without EE", "with EE")]
    rows += [(m, _cell(m, False), _cell(m, True)) for m in methods]
    widths = [max(len(row[c]) for row in rows) for c in range(3)]
    lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    if report.bayes_floor is not None:
        lines.append(f"Bayes MAPE floor: {report.bayes_floor:.4f}")
    lines.append(f"train rows: {report.n_train}  test rows: {report.n_test}  version: {report.version}")
    return "\n".join(lines) + "\n"


def write_report(report: BenchmarkReport, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """Write ``report.json`` and the rendered ``report.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = write_json(report.to_dict(), out_dir / "report.json")
    text_path = out_dir / "report.txt"
    text_path.write_text(render_table(report), encoding="utf-8")
    logger.info("Report written to %s", out_dir)
    return json_path, text_path


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

class AnalysisFlag(str, Enum):
    TSNE = "tsne"
    SCATTER = "scatter"
    PC_DENSITY = "pc_density"
    PC_SALES = "pc_sales"
    CROSS_CORR = "cross_corr"
    SCHOENBERG = "schoenberg"
    MARDIA = "mardia"


@dataclass(frozen=True)
class AnalysisConfig:
    flags: Tuple[AnalysisFlag, ...] = ()
    tsne_features: Tuple[str, ...] = ("state",)
    metric_feature: str = "store"
    metric_samples: int = 1000
    metric_scale: str = "transformed"
    merge_tol: float = 0.0
    scatter_pairs: int = 10000
    lambdas: Tuple[float, ...] = geometry.DEFAULT_LAMBDAS
    density_feature: str = "store"
    top_k: int = 4
    bins: int = 30
    random_directions: int = 2
    mardia_components: int = 4
    embedding_source: EmbeddingSource = EmbeddingSource.FIRST
    render: Tuple[str, ...] = ("svg",)
    palette: Dict[str, str] = field(default_factory=dict)
    tsne: TsneConfig = field(default_factory=TsneConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "flags", tuple(AnalysisFlag(f) for f in self.flags))
        object.__setattr__(self, "embedding_source", EmbeddingSource(self.embedding_source))
        object.__setattr__(self, "tsne_features", tuple(self.tsne_features))
        object.__setattr__(self, "lambdas", tuple(float(l) for l in self.lambdas))
        object.__setattr__(self, "render", tuple(self.render))
        if self.metric_scale not in ("transformed", "sales"):
            raise ConfigError(f"metric_scale must be 'transformed' or 'sales', got {self.metric_scale!r}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "AnalysisConfig":
        """Build from the ``analysis`` and ``geometry`` sections (t-SNE under ``geometry.tsne``)."""
        merged = dict(config.get("geometry") or {})
        tsne_cfg = TsneConfig.from_mapping(merged.pop("tsne", None))
        merged.update(config.get("analysis") or {})
        return cls(**_strict(cls, merged, "analysis/geometry"), tsne=tsne_cfg)


@dataclass
class AnalysisSummary:
    files: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def _embedding(embs: Sequence[EmbeddingMatrix], data: Dataset, feature: str) -> EmbeddingMatrix:
    return embs[data.schema.index(feature)]


def run_analysis(
    networks: Sequence[Network],
    data: Dataset,
    cfg: AnalysisConfig,
    out_dir: Union[str, Path],
    truth: Optional[SyntheticTruth] = None,
) -> AnalysisSummary:
    """Write plot-data CSVs (and renders) for each flag plus ``summary.json``.

    Raises:
        StepError: An analysis failed; ``step`` is the flag name.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    embs = select_embeddings(networks, cfg.embedding_source)
    start, end = date_range_of(data)
    result = AnalysisSummary(summary={
        "version": __version__,
        "rows": len(data),
        "date_range": [start.isoformat(), end.isoformat()],
        "features": {e.name: {"cardinality": e.cardinality, "dim": e.dim} for e in embs},
        "flags": [f.value for f in cfg.flags],
    })
    style = PlotStyle()
    metric_cache: Dict[str, geometry.CategoryMetric] = {}

    def _metric() -> geometry.CategoryMetric:
        if "metric" not in metric_cache:
            predictor = ensemble_predictor(networks, cfg.metric_scale)
            metric_cache["metric"] = geometry.estimate_metric(
                predictor, data, cfg.metric_feature, cfg.metric_samples, cfg.seed)
        return metric_cache["metric"]

    for flag in cfg.flags:
        with _step(flag.value):
            if flag is AnalysisFlag.TSNE:
                entries = {}
                for feature in cfg.tsne_features:
                    emb = _embedding(embs, data, feature)
                    layout = run_tsne(emb.weights, cfg.tsne)
                    labels = list(emb.labels)
                    frame = pd.DataFrame({"x": layout.embedding[:, 0], "y": layout.embedding[:, 1], "label": labels})
                    target = write_plot_csv(frame, out_dir / f"tsne_{feature}.csv")
                    result.files.append(target)
                    result.files.extend(render_scatter(layout.embedding, labels, target, cfg.render,
                                                       f"t-SNE of {feature} embedding",
                                                       label_palette(labels, cfg.palette), style))
                    entries[feature] = {"perplexity": layout.perplexity, "final_kl": layout.final_kl}
                result.summary["tsne"] = entries

            elif flag is AnalysisFlag.SCATTER:
                emb = _embedding(embs, data, cfg.metric_feature)
                scatter = geometry.embedding_metric_scatter(emb, _metric(), cfg.scatter_pairs, cfg.seed)
                target = write_plot_csv(scatter[["pair_id", "emb_dist", "metric_dist"]],
                                        out_dir / f"scatter_{cfg.metric_feature}.csv")
                result.files.append(target)
                points = scatter[["emb_dist", "metric_dist"]].to_numpy()
                result.files.extend(render_scatter(points, [""] * len(points), target, cfg.render,
                                                   "embedding distance vs metric distance",
                                                   {"": "#1f77b4"}, replace(style, show_labels=False, radius=2)))
                result.summary["scatter"] = {
                    "pairs": len(scatter),
                    "spearman": float(scatter["emb_dist"].corr(scatter["metric_dist"], method="spearman")),
                }

            elif flag is AnalysisFlag.SCHOENBERG:
                merged, merge_map = geometry.merge_indiscernible(_metric(), cfg.merge_tol)
                checks = geometry.schoenberg_sweep(merged, cfg.lambdas)
                result.summary["schoenberg"] = {
                    "values": merged.size,
                    "merged_away": int(merge_map.size - merged.size),
                    "checks": [c.to_dict() for c in checks],
                }

            elif flag is AnalysisFlag.PC_DENSITY:
                emb = _embedding(embs, data, cfg.density_feature)
                report = geometry.pc_density_report(emb, min(cfg.top_k, emb.dim), cfg.bins)
                rows = []
                for comp in report:
                    for left, right, mass in zip(comp.bin_edges[:-1], comp.bin_edges[1:], comp.bin_masses):
                        rows.append({"component": comp.component, "bin_left": left, "bin_right": right, "mass": mass})
                target = write_plot_csv(pd.DataFrame(rows), out_dir / f"pc_density_{cfg.density_feature}.csv")
                result.files.append(target)
                result.summary["pc_density"] = [comp.to_dict() for comp in report]

            elif flag is AnalysisFlag.PC_SALES:
                emb = _embedding(embs, data, cfg.density_feature)
                sales = category_mean_sales(data, cfg.density_feature)
                directions = {"pc1": pca(emb.weights).components[:, 0]}
                for k, v in enumerate(geometry.random_directions(emb.dim, cfg.random_directions, cfg.seed)):
                    directions[f"random{k + 1}"] = v
                frames = [geometry.sales_along_direction(emb, v, sales, name) for name, v in directions.items()]
                target = write_plot_csv(pd.concat(frames, ignore_index=True)[["component", "projection", "mean_sales"]],
                                        out_dir / f"pc_sales_{cfg.density_feature}.csv")
                result.files.append(target)
                result.summary["pc_sales"] = {
                    name: float(f["projection"].corr(f["mean_sales"], method="spearman"))
                    for name, f in zip(directions, frames)
                }

            elif flag is AnalysisFlag.CROSS_CORR:
                report = geometry.cross_subspace_correlation(embs, data)
                result.summary["cross_corr"] = {
                    "max_abs": report.max_abs,
                    "pairs": {f"{embs[i].name}-{embs[j].name}": v for (i, j), v in report.pairs.items()},
                }

            elif flag is AnalysisFlag.MARDIA:
                emb = _embedding(embs, data, cfg.density_feature)
                k = max(2, min(cfg.mardia_components, emb.dim, emb.cardinality - 2))
                projections = pca(emb.weights).project(emb.weights, k)
                skew, kurt = mardia(projections)
                result.summary["mardia"] = {"components": k, "skew": skew.to_dict(), "kurtosis": kurt.to_dict()}

    if truth is not None:
        store = embs[data.schema.index("store")] if "store" in data.schema.names else None
        if store is not None and truth.store_latent.shape[0] == store.cardinality and store.dim >= truth.store_latent.shape[1]:
            plane = pca(store.weights).project(store.weights, truth.store_latent.shape[1])
            disparity, _ = geometry.procrustes_alignment(truth.store_latent, plane)
            result.summary["latent_alignment"] = {"disparity": disparity,
                                                  "correlation": float(np.sqrt(max(0.0, 1.0 - disparity)))}

    result.files.append(write_json(result.summary, out_dir / "summary.json"))
    logger.info("Analysis wrote %s files to %s", len(result.files), out_dir)
    return result


def export_embeddings(
    networks: Union[Network, Sequence[Network]],
    directory: Union[str, Path],
    source: EmbeddingSource = EmbeddingSource.FIRST,
) -> List[Path]:
    """Per-feature embedding CSVs plus ``manifest.json``."""
    members = [networks] if isinstance(networks, Network) else list(networks)
    if not members:
        raise DataSourceError("no networks to export embeddings from")
    return write_embeddings(select_embeddings(members, source), directory)
