"""Command line entry point.

Subcommands: ``synth``, ``ingest``, ``train``, ``benchmark``, ``analyze`` and
``export-embeddings``. Global flags override the matching config values.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from . import __version__
from .errors import ConfigError, ToolkitError
from .services import harness
from .services.net import predict_ensemble
from .services.synthetic import SyntheticConfig, bayes_mape_floor, synthetic_frame
from .services.tabular import SplitMode, mape, split
from .toolkit import load_config
from .utils.serialization import load_ensemble, save_dataset, save_ensemble, write_json

logger = logging.getLogger(__name__)

__all__ = ["build_parser", "apply_overrides", "main"]


def _embedding_dim(text: str) -> tuple:
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected feature=D, got {text!r}")
    try:
        return name.strip(), int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"embedding dimension must be an integer, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entity-embedding",
        description="Entity embeddings of categorical variables: training, benchmark and analysis.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, default=None, help="YAML config file (default: config.yml)")
    parser.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    parser.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--data", default=None,
                        help="CSV path or URL, cached .npz dataset, or 'synthetic' (default)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--embedding-dim", type=_embedding_dim, action="append", default=[],
                        metavar="FEATURE=D", help="embedding width for one feature (repeatable)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", help="write a synthetic Rossmann-shaped CSV plus its ground truth")
    sub.add_parser("ingest", help="parse the data source and cache it as dataset.npz")
    train = sub.add_parser("train", help="train the embedding network ensemble")
    train.add_argument("--split-mode", choices=[m.value for m in SplitMode], default=None)

    sub.add_parser("benchmark", help="run the with/without embedding comparison")

    analyze = sub.add_parser("analyze", help="write embedding geometry plot data and statistics")
    analyze.add_argument("--models", type=Path, default=None, help="directory of member_<k>.npz checkpoints")
    analyze.add_argument("--flags", nargs="+", choices=[f.value for f in harness.AnalysisFlag], default=None)

    export = sub.add_parser("export-embeddings", help="write per-feature embedding CSVs")
    export.add_argument("--models", type=Path, required=True, help="directory of member_<k>.npz checkpoints")
    export.add_argument("--source", choices=[s.value for s in harness.EmbeddingSource], default=None)
    return parser


def apply_overrides(config: Dict[str, Any], args: argparse.Namespace) -> Dict[str, Any]:
    """Fold command line flags into the loaded config (in place) and return it."""
    if args.seed is not None:
        for section in ("benchmark", "net", "synthetic", "analysis"):
            config[section]["seed"] = args.seed
        config["geometry"]["tsne"]["seed"] = args.seed
    if args.log_level:
        config["logging"]["level"] = args.log_level.upper()
    for name, dim in args.embedding_dim:
        config["tabular"]["embedding_dims"][name] = dim
    if getattr(args, "flags", None):
        config["analysis"]["flags"] = list(args.flags)
    if getattr(args, "source", None):
        config["analysis"]["embedding_source"] = args.source
    if getattr(args, "split_mode", None):
        config["benchmark"]["split_mode"] = args.split_mode
    return config


def _configure_logging(config: Dict[str, Any]) -> None:
    section = config["logging"]
    level = logging.getLevelName(str(section.get("level", "INFO")).upper())
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level {section.get('level')!r}")
    logging.basicConfig(level=level, format=section.get("format"), force=True)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(config: Dict[str, Any], args: argparse.Namespace) -> int:
    cfg = SyntheticConfig.from_mapping(config["synthetic"])
    frame, params = synthetic_frame(cfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = args.out_dir / "synthetic.csv"
    frame.to_csv(csv_path, index=False)
    truth = {
        "store_latent": params["latent"],
        "store_state": params["state"],
        "dow_effects": params["dow_effects"],
        "month_effects": params["month_effects"],
        "noise_sigma": cfg.noise_sigma,
        "bayes_floor": bayes_mape_floor(cfg.noise_sigma, seed=cfg.seed),
    }
    write_json(truth, args.out_dir / "synthetic_truth.json")
    print(f"wrote {len(frame)} rows to {csv_path}")
    return 0


def _cmd_ingest(config: Dict[str, Any], args: argparse.Namespace) -> int:
    data, _ = harness.load_data(args.data, config)
    path = save_dataset(data, args.out_dir / "dataset.npz")
    print(f"cached {len(data)} rows ({', '.join(data.schema.names)}) to {path}")
    return 0


def _cmd_train(config: Dict[str, Any], args: argparse.Namespace) -> int:
    bench = harness.BenchmarkConfig.from_config(config)
    data, _ = harness.load_data(args.data, config)
    train, test = split(data, bench.split_mode, bench.test_fraction, bench.seed)
    networks, transform = harness.train_networks(bench.net, train)
    save_ensemble(networks, args.out_dir / "models")
    score = mape(predict_ensemble(networks, test.x, transform), test.y)
    print(f"trained {len(networks)} networks on {len(train)} rows; test MAPE {score:.4f}")
    return 0


def _cmd_benchmark(config: Dict[str, Any], args: argparse.Namespace) -> int:
    bench = harness.BenchmarkConfig.from_config(config)
    data, truth = harness.load_data(args.data, config)
    report = harness.run_benchmark(bench, data, truth)
    harness.write_report(report, args.out_dir)
    print(harness.render_table(report), end="")
    return 0


def _cmd_analyze(config: Dict[str, Any], args: argparse.Namespace) -> int:
    cfg = harness.AnalysisConfig.from_config(config)
    data, truth = harness.load_data(args.data, config)
    if args.models is not None:
        networks = load_ensemble(args.models)
    else:
        bench = harness.BenchmarkConfig.from_config(config)
        train, _ = split(data, bench.split_mode, bench.test_fraction, bench.seed)
        networks, _ = harness.train_networks(bench.net, train)
    result = harness.run_analysis(networks, data, cfg, args.out_dir, truth)
    print(f"wrote {len(result.files)} files to {args.out_dir}")
    return 0


def _cmd_export(config: Dict[str, Any], args: argparse.Namespace) -> int:
    networks = load_ensemble(args.models)
    written = harness.export_embeddings(networks, args.out_dir, config["analysis"]["embedding_source"])
    print(f"exported {len(written)} embeddings to {args.out_dir}")
    return 0


COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "benchmark": _cmd_benchmark,
    "analyze": _cmd_analyze,
    "export-embeddings": _cmd_export,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 on success, 2 on a toolkit error, 1 otherwise."""
    args = build_parser().parse_args(list(argv) if argv is not None else None)
    try:
        config = apply_overrides(load_config(args.config), args)
        _configure_logging(config)
        return COMMANDS[args.command](config, args)
    except ToolkitError as exc:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.error("Command %s failed: %s", args.command, exc, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
