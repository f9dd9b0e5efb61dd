from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import pandas as pd
from dotenv import load_dotenv
from rich.panel import Panel

from src.data.dataset import PreparedData, load_datasets, save_datasets
from src.data.loader import load_manifest, manifest_fingerprint
from src.data.preprocess import preprocess
from src.data.windows import make_windows
from src.errors import ConfigError, GlueError
from src.models.baselines import fit_baseline
from src.models.checkpoint import Checkpoint, check_sensors, load_checkpoint
from src.models.glue import GlueHyper, GlueParams, init_params, predict
from src.models.graph import candidate_indices, export_embeddings, export_graph
from src.tasks.evaluation import MetricsSummary, forecast_metrics, make_report, prf1, render_table
from src.tasks.reports import read_scores_csv, save_bands, save_detection, summarize
from src.tasks.scoring import AnomalyReport, resolve_anomaly_rate, score_forecasts, score_raw
from src.tasks.training import TrainConfig, TrainReport, train
from src.utils.config import RunConfig, load_run_config, write_run_config
from src.utils.console import console, get_logger, setup_logging
from src.utils.plots import plot_embeddings, plot_loss_curve

logger = get_logger(__name__)

CHECKPOINT_NAME = "checkpoint.glue"
DEFAULT_K = {"wadi": 15, "nasa": 5, "generic": 5}


def model_name(head_mode: str) -> str:
    return "glue" if head_mode == "gaussian" else "gdn"


def prepare_from_manifest(manifest_path: Path, out_dir: Path) -> PreparedData:
    """Preprocess a manifest and cache it under `out_dir`, tagged with its source fingerprint."""
    data = preprocess(load_manifest(manifest_path))
    data.meta["source"] = {"manifest": str(Path(manifest_path).resolve()),
                           "sha256": manifest_fingerprint(manifest_path)}
    save_datasets(data, out_dir)
    return data


def load_data(config: RunConfig) -> PreparedData:
    """Preprocessed dataset from DATA_DATASET_DIR, a matching `preprocess` cache, or the manifest."""
    if config.data.dataset_dir is not None:
        return load_datasets(config.data.dataset_dir)
    cached = config.run.out_dir / "dataset"
    if config.data.manifest is None:
        if (cached / "meta.json").exists():
            return load_datasets(cached)
        raise ConfigError("set DATA_MANIFEST or DATA_DATASET_DIR", key="DATA_MANIFEST")
    if (cached / "meta.json").exists():
        data = load_datasets(cached)
        source = data.meta.get("source") or {}
        if source.get("sha256") == manifest_fingerprint(config.data.manifest):
            return data
        logger.info("[dataset] cache at %s was built from %s; rebuilding from %s", cached,
                    source.get("manifest", "an unknown manifest"), config.data.manifest)
    return prepare_from_manifest(config.data.manifest, cached)


def make_hyper(config: RunConfig, data: PreparedData, head_mode: str) -> GlueHyper:
    m = config.model
    return GlueHyper(
        n_sensors=len(data.sensor_names),
        d=m.d,
        window=data.window,
        k=m.k or DEFAULT_K.get(data.train.kind, 5),
        leaky_slope=m.leaky_slope,
        sigma_floor=m.sigma_floor,
        hidden_layers=m.hidden_layers,
        head_mode=head_mode,
        per_node_attention=m.per_node_attention,
    )


def anomaly_rate_for(config: RunConfig, data: PreparedData) -> float:
    configured = config.scoring.anomaly_rate if config.scoring.anomaly_rate is not None else data.anomaly_rate
    return resolve_anomaly_rate(configured, data.train.labels)


def train_model(config: RunConfig, data: PreparedData, head_mode: str) -> Tuple[GlueParams, TrainReport]:
    name = model_name(head_mode)
    out_dir = config.run.out_dir / "train" / name
    windows = make_windows(data.train, data.window)
    hyper = make_hyper(config, data, head_mode)
    params = init_params(hyper, seed=config.run.seed)
    train_cfg = TrainConfig.from_run(config).model_copy(update={"head_mode": head_mode})
    logger.info("[%s] training on %d windows, %d sensors, k=%d", name, len(windows), hyper.n_sensors, hyper.k)
    params, report = train(
        params,
        windows,
        train_cfg,
        candidates=candidate_indices(data.candidates, data.sensor_names),
        checkpoint_path=out_dir / CHECKPOINT_NAME,
        sensor_names=data.sensor_names,
        norm_stats=data.train.norm_stats,
        meta={"dataset": data.meta.get("dataset"), "config_hash": config.config_hash()},
    )
    report.save_csv(out_dir / "loss_history.csv")
    plot_loss_curve(report.losses, out_dir / "loss_curve.svg", title=f"{name} training loss")
    return params, report


@dataclass
class DetectionResult:
    report: AnomalyReport
    metrics: Optional[MetricsSummary]
    paths: List[Path]


def detect_with_checkpoint(config: RunConfig, data: PreparedData, ckpt: Checkpoint) -> DetectionResult:
    check_sensors(ckpt.sensor_names, data.sensor_names)
    name = model_name(ckpt.head_mode)
    train_w = make_windows(data.train, ckpt.params.hyper.window)
    test_w = make_windows(data.test, ckpt.params.hyper.window)
    batch_size = config.train.batch_size
    train_fc = predict(ckpt.params, ckpt.graph, train_w, batch_size)
    test_fc = predict(ckpt.params, ckpt.graph, test_w, batch_size)

    report = score_forecasts(
        name, train_fc.mu, train_w.targets, test_fc.mu, test_w.targets, test_w.target_times,
        anomaly_rate_for(config, data), truth=test_w.target_labels, iqr_floor=config.scoring.iqr_floor,
        train_times=train_w.target_times,
    )
    metrics = summarize(report, forecast_metrics(test_fc.mu, test_w.targets))
    out_dir = config.run.out_dir / "detect" / name
    paths = save_detection(report, out_dir, data.sensor_names, metrics, config.config_hash(),
                           header={"head_mode": ckpt.head_mode})
    paths += save_bands(test_fc, test_w, data.sensor_names, out_dir / "bands")
    return DetectionResult(report, metrics, paths)


def detect_baseline(config: RunConfig, data: PreparedData, kind: str) -> DetectionResult:
    train_w = make_windows(data.train, data.window)
    test_w = make_windows(data.test, data.window)
    model = fit_baseline(kind, train_w, config.baseline, seed=config.run.seed, threads=config.run.threads)
    rate = anomaly_rate_for(config, data)
    forecast = None
    if model.is_forecaster:
        train_pred, test_pred = model.forecast(train_w), model.forecast(test_w)
        report = score_forecasts(kind, train_pred, train_w.targets, test_pred, test_w.targets, test_w.target_times,
                                 rate, truth=test_w.target_labels, iqr_floor=config.scoring.iqr_floor,
                                 train_times=train_w.target_times)
        forecast = forecast_metrics(test_pred, test_w.targets)
    else:
        report = score_raw(kind, model.score(train_w, training=True), model.score(test_w), test_w.target_times, rate,
                           truth=test_w.target_labels, score_kind=model.score_kind,
                           train_times=train_w.target_times)
    metrics = summarize(report, forecast)
    paths = save_detection(report, config.run.out_dir / "detect" / kind, data.sensor_names, metrics,
                           config.config_hash(), header={"baseline": kind})
    return DetectionResult(report, metrics, paths)


def _checkpoint_path(args: argparse.Namespace, config: RunConfig) -> Path:
    if args.checkpoint is not None:
        return Path(args.checkpoint)
    return config.run.out_dir / "train" / model_name(config.model.head_mode) / CHECKPOINT_NAME


def cmd_preprocess(args: argparse.Namespace, config: RunConfig) -> str:
    manifest_path = Path(args.manifest) if args.manifest else config.data.manifest
    if manifest_path is None:
        raise ConfigError("pass --manifest or set DATA_MANIFEST", key="DATA_MANIFEST")
    meta_path = config.run.out_dir / "dataset" / "meta.json"
    data = prepare_from_manifest(manifest_path, meta_path.parent)
    return (
        f"{len(data.sensor_names)} sensors ({len(data.train.dropped_sensors)} dropped), "
        f"{data.train.n_rows} train / {data.test.n_rows} test rows\nSaved to {meta_path.parent}"
    )


def cmd_train(args: argparse.Namespace, config: RunConfig) -> str:
    data = load_data(config)
    _, report = train_model(config, data, config.model.head_mode)
    return f"Final loss {report.losses[-1]:.6f}\nCheckpoint saved to {report.checkpoint_path}"


def cmd_detect(args: argparse.Namespace, config: RunConfig) -> str:
    data = load_data(config)
    ckpt = load_checkpoint(_checkpoint_path(args, config))
    result = detect_with_checkpoint(config, data, ckpt)
    lines = [f"Threshold {result.report.threshold:.4f}, flagged {int(result.report.predicted.sum())} "
             f"of {len(result.report.predicted)} test windows"]
    if result.metrics is not None:
        m = result.metrics
        lines.append(f"P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f}")
    lines.append(f"Report saved to {result.paths[0].parent}")
    return "\n".join(lines)


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> str:
    runs = []
    for raw in args.scores:
        path = Path(raw)
        predicted, truth = read_scores_csv(path)
        runs.append((path.parent.name or path.stem, prf1(predicted, truth)))
    json_path, _ = make_report(runs, config.run.out_dir / "evaluate", config.config_hash())
    console.print(render_table(runs))
    return f"Report saved to {json_path}"


def cmd_compare(args: argparse.Namespace, config: RunConfig) -> str:
    data = load_data(config)
    runs: List[Tuple[str, MetricsSummary]] = []
    for kind in config.baseline.models:
        if kind in ("glue", "gdn"):
            head_mode = "gaussian" if kind == "glue" else "point"
            train_model(config, data, head_mode)
            ckpt = load_checkpoint(config.run.out_dir / "train" / kind / CHECKPOINT_NAME)
            result = detect_with_checkpoint(config, data, ckpt)
        else:
            result = detect_baseline(config, data, kind)
        if result.metrics is None:
            raise ConfigError("comparison needs test labels", key="LABEL_COLUMN")
        runs.append((kind, result.metrics))
    json_path, _ = make_report(runs, config.run.out_dir / "compare", config.config_hash())
    console.print(render_table(runs))
    return f"Report saved to {json_path}"


def cmd_export(args: argparse.Namespace, config: RunConfig) -> str:
    ckpt = load_checkpoint(_checkpoint_path(args, config))
    out_dir = config.run.out_dir / "export"
    _, proj_path = export_embeddings(ckpt.graph, ckpt.sensor_names, out_dir)
    edges_path = export_graph(ckpt.graph, ckpt.sensor_names, out_dir / "graph_edges.csv")
    plot_embeddings(pd.read_csv(proj_path), out_dir / "embeddings_pca2d.svg")
    return f"{len(ckpt.sensor_names)} embeddings and {len(ckpt.graph.edges())} edges written to {edges_path.parent}"


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], str]] = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glue", description="Graph-attention sensor anomaly detection")
    parser.add_argument("--config", type=Path, help="flat KEY=value run config")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out-dir", type=Path)
    parser.add_argument("--threads", type=int)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="load, clean and normalize a dataset")
    p.add_argument("--manifest", type=Path)
    p = sub.add_parser("train", help="train the forecaster (MODEL_HEAD_MODE picks glue or gdn)")
    p.add_argument("--head-mode", choices=["gaussian", "point"])
    p = sub.add_parser("detect", help="score the test split with a trained checkpoint")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--head-mode", choices=["gaussian", "point"])
    p = sub.add_parser("evaluate", help="metrics from saved scores.csv files")
    p.add_argument("scores", nargs="+", type=Path)
    sub.add_parser("compare", help="run the selected baselines plus gdn/glue")
    p = sub.add_parser("export", help="write embeddings, PCA-2D projection and the learned graph")
    p.add_argument("--checkpoint", type=Path)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "run.seed": args.seed,
        "run.out_dir": args.out_dir,
        "run.threads": args.threads,
        "model.head_mode": getattr(args, "head_mode", None),
    }


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, _overrides(args))
        console.print(Panel.fit(f"Running '{args.command}' into {config.run.out_dir}", title="GLUE"))
        config.run.out_dir.mkdir(parents=True, exist_ok=True)
        write_run_config(config, config.run.out_dir / "run_config.env")
        message = COMMANDS[args.command](args, config)
    except (GlueError, FileNotFoundError) as e:
        console.print(Panel.fit(str(e), title="Error", style="red"))
        return 1
    console.print(Panel.fit(message, title="Done", style="green"))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
