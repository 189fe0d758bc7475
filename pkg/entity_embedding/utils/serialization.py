"""On-disk formats: dataset cache, network checkpoints, embedding CSVs, reports.

Binary artifacts are ``.npz`` archives whose ``header`` entry holds a JSON
document with a format name and version; loading refuses anything else.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from ..errors import DataSourceError, ShapeError
from ..services.net import EmbeddingMatrix, Network
from ..services.tabular import Dataset, FeatureSchema

logger = logging.getLogger(__name__)

__all__ = [
    "FORMAT_VERSION",
    "save_dataset",
    "load_dataset",
    "save_network",
    "load_network",
    "write_embeddings",
    "read_embeddings",
    "write_plot_csv",
    "write_json",
    "read_json",
    "save_ensemble",
    "load_ensemble",
]

FORMAT_VERSION = 1
DATASET_FORMAT = "entity-embedding/dataset"
NETWORK_FORMAT = "entity-embedding/network"
EMBEDDING_MANIFEST = "manifest.json"
FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def _header(kind: str, **payload: Any) -> np.ndarray:
    return np.array(json.dumps({"format": kind, "version": FORMAT_VERSION, **payload}))


def _read_header(archive: np.lib.npyio.NpzFile, kind: str, path: Path) -> dict:
    if "header" not in archive.files:
        raise DataSourceError(f"{path} has no header")
    header = json.loads(str(archive["header"]))
    if header.get("format") != kind:
        raise DataSourceError(f"{path} is a '{header.get('format')}' file, expected '{kind}'")
    if header.get("version") != FORMAT_VERSION:
        raise DataSourceError(f"{path} has format version {header.get('version')}, expected {FORMAT_VERSION}")
    return header


def _open(path: Path) -> np.lib.npyio.NpzFile:
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataSourceError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Dataset cache
# ---------------------------------------------------------------------------

def save_dataset(d: Dataset, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez_compressed(
            fh,
            header=_header(DATASET_FORMAT, schema=d.schema.to_dict()),
            x=d.x,
            y=d.y,
            dates=d.dates.astype(np.int64),
        )
    logger.info("Cached dataset (%s rows) to %s", len(d), path)
    return path


def load_dataset(path: PathLike) -> Dataset:
    path = Path(path)
    with _open(path) as archive:
        header = _read_header(archive, DATASET_FORMAT, path)
        schema = FeatureSchema.from_dict(header["schema"])
        return Dataset(schema, archive["x"], archive["y"], archive["dates"].astype("datetime64[D]"))


# ---------------------------------------------------------------------------
# Network checkpoints
# ---------------------------------------------------------------------------

def save_network(net: Network, path: PathLike) -> Path:
    """Checkpoint with a JSON manifest of the architecture and parameter shapes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param__{name}": value for name, value in net.params.items()}
    with path.open("wb") as fh:
        np.savez_compressed(
            fh,
            header=_header(NETWORK_FORMAT, manifest=net.manifest()),
            history=np.asarray(net.history, dtype=np.float64),
            **arrays,
        )
    logger.debug("Saved network checkpoint %s", path)
    return path


def load_network(path: PathLike) -> Network:
    path = Path(path)
    with _open(path) as archive:
        header = _read_header(archive, NETWORK_FORMAT, path)
        manifest = header["manifest"]
        params = {k[len("param__"):]: archive[k] for k in archive.files if k.startswith("param__")}
        for name, shape in manifest["shapes"].items():
            if name not in params or list(params[name].shape) != list(shape):
                raise ShapeError(f"{path}: parameter '{name}' does not match its manifest shape {shape}")
        net = Network.from_manifest(manifest, params)
        net.history = archive["history"].tolist()
    return net


# ---------------------------------------------------------------------------
# Embedding CSVs
# ---------------------------------------------------------------------------

def write_embeddings(embs: Sequence[EmbeddingMatrix], directory: PathLike) -> List[Path]:
    """One ``<feature>.csv`` per embedding plus a manifest of shapes.

    CSV header: ``category_label,e_0,...,e_{D-1}``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    manifest = []
    for emb in embs:
        name = emb.name or f"feature_{emb.feature_index}"
        labels = list(emb.labels) or [str(i) for i in range(emb.cardinality)]
        frame = pd.DataFrame(emb.weights, columns=[f"e_{k}" for k in range(emb.dim)])
        frame.insert(0, "category_label", labels)
        target = directory / f"{name}.csv"
        try:
            frame.to_csv(target, index=False, float_format=FLOAT_FORMAT)
        except OSError as exc:
            raise DataSourceError(f"cannot write {target}: {exc}") from exc
        written.append(target)
        manifest.append({"feature": name, "feature_index": emb.feature_index, "file": target.name,
                         "rows": emb.cardinality, "dim": emb.dim})
    write_json({"format": "entity-embedding/embeddings", "version": FORMAT_VERSION, "features": manifest},
               directory / EMBEDDING_MANIFEST)
    logger.info("Exported %s embedding matrices to %s", len(written), directory)
    return written


def read_embeddings(directory: PathLike) -> List[EmbeddingMatrix]:
    directory = Path(directory)
    manifest = read_json(directory / EMBEDDING_MANIFEST)
    embs = []
    for entry in manifest["features"]:
        target = directory / entry["file"]
        if not target.is_file():
            raise FileNotFoundError(f"embedding file not found: {target}")
        frame = pd.read_csv(target, dtype={"category_label": str}, keep_default_na=False,
                            float_precision="round_trip")
        weights = frame.drop(columns="category_label").to_numpy(dtype=np.float64)
        if weights.shape != (entry["rows"], entry["dim"]):
            raise ShapeError(f"{target}: shape {weights.shape} differs from manifest "
                             f"({entry['rows']}, {entry['dim']})")
        embs.append(EmbeddingMatrix(entry["feature_index"], weights, entry["feature"],
                                    tuple(frame["category_label"])))
    return embs


# ---------------------------------------------------------------------------
# Plot data and reports
# ---------------------------------------------------------------------------

def write_plot_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataSourceError(f"{path} is not valid JSON: {exc}") from exc


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

def save_ensemble(networks: Sequence[Network], directory: PathLike) -> List[Path]:
    """One checkpoint per member, ``member_<k>.npz``, in member order."""
    directory = Path(directory)
    return [save_network(net, directory / f"member_{k}.npz") for k, net in enumerate(networks)]


def load_ensemble(directory: PathLike) -> List[Network]:
    directory = Path(directory)
    paths = sorted(directory.glob("member_*.npz"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise FileNotFoundError(f"no member checkpoints in {directory}")
    return [load_network(p) for p in paths]
