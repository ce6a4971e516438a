"""Experiment configuration, end-to-end runner and report handling.

A run is fully described by an :class:`ExperimentConfig`; the same config
and seed always give the same report and round log, whatever the thread
count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import compression as comp
from .data import (
    Cluster,
    DataError,
    SyntheticConfig,
    assign_clusters,
    clean,
    generate_synthetic,
    ingest_csv,
    make_windows,
    split_normalize,
    write_csv,
)
from .federation import FedConfig, NumericalError, run_federated, run_local_only, write_round_log
from .metrics import ForecastEval, cluster_report
from .model import TrainConfig, forecast, init_params, param_count
from .numerics import stream

__all__ = [
    "REPORT_SCHEMA",
    "ConfigError",
    "DataSection",
    "FederationSection",
    "ExperimentConfig",
    "load_config",
    "load_cohort",
    "run_experiment",
    "write_report",
    "generate_dataset",
    "compare_reports",
]

REPORT_SCHEMA = "amifml.report/1"
log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    path: str | None = None
    manifest: str | None = None
    clusters: int = 10
    meters_per_cluster: int = 50
    train_days: int = 503
    test_days: int = 30
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ValueError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.path:
            raise ValueError("data.path is required for csv source")
        if min(self.clusters, self.meters_per_cluster, self.train_days, self.test_days) < 1:
            raise ValueError("clusters, meters_per_cluster, train_days and test_days must be >= 1")


@dataclass(frozen=True)
class FederationSection:
    enabled: bool = False
    round_windows: int = 48
    weights: str = "uniform"


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    label: str = ""
    data: DataSection = field(default_factory=DataSection)
    model: TrainConfig = field(default_factory=TrainConfig)
    federation: FederationSection = field(default_factory=FederationSection)
    compression: comp.CompressionSpec = field(default_factory=comp.CompressionSpec)
    output_dir: str | None = None

    def __post_init__(self):
        if self.compression.kind != "none" and not self.federation.enabled:
            raise ValueError("compression only applies to federated runs")
        # surfaces bad values early
        self.fed_config()

    @property
    def scenario(self) -> str:
        if self.label:
            return self.label
        if not self.federation.enabled:
            return "local"
        name = f"fed-k{self.federation.round_windows}"
        if self.compression.kind not in ("none",):
            name += "-" + self.compression.label
        return name

    def fed_config(self) -> FedConfig:
        return FedConfig(self.model, self.federation.round_windows, self.federation.weights, self.compression)

    def to_dict(self, include_output: bool = True) -> dict:
        d = asdict(self)
        d["data"]["synthetic"]["cluster_weight"] = list(d["data"]["synthetic"]["cluster_weight"])
        if not include_output:
            d.pop("output_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            d = dict(d)
            data = dict(d.pop("data", {}))
            if "synthetic" in data:
                syn = dict(data["synthetic"])
                if "cluster_weight" in syn:
                    syn["cluster_weight"] = tuple(syn["cluster_weight"])
                data["synthetic"] = _build(SyntheticConfig, syn, "data.synthetic")
            return _build(cls, {
                **d,
                "data": _build(DataSection, data, "data"),
                "model": _build(TrainConfig, d.get("model", {}), "model"),
                "federation": _build(FederationSection, d.get("federation", {}), "federation"),
                "compression": _build(comp.CompressionSpec, d.get("compression", {}), "compression"),
            }, "config")
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _build(klass, values, where):
    if not isinstance(values, dict):
        if isinstance(values, klass):
            return values
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(klass)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return klass(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# data


def load_cohort(cfg: ExperimentConfig):
    """Series and clusters for the configured data source, cleaned."""
    d = cfg.data
    if d.source == "synthetic":
        series, clusters = generate_synthetic(d.clusters, d.meters_per_cluster, d.train_days + d.test_days,
                                              cfg.master_seed, d.synthetic)
    else:
        try:
            series = ingest_csv(d.path)
        except OSError as exc:
            raise DataError(f"cannot read {d.path}: {exc}") from exc
        series = [clean(s) for s in series]
        if d.manifest:
            try:
                with open(d.manifest, encoding="utf-8") as fh:
                    man = json.load(fh)
                clusters = [Cluster(int(c["cluster_id"]), tuple(c["meter_ids"])) for c in man["clusters"]]
            except (OSError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"bad manifest {d.manifest}: {exc}") from exc
            clusters = clusters[: d.clusters]
        else:
            clusters = assign_clusters([s.meter_id for s in series], d.clusters, d.meters_per_cluster)
    by_id = {s.meter_id: s for s in series}
    missing = [m for c in clusters for m in c.meter_ids if m not in by_id]
    if missing:
        raise DataError(f"cluster meters missing from data: {missing[:5]}")
    return by_id, clusters


def generate_dataset(cfg: ExperimentConfig, out_dir) -> dict:
    """Write the synthetic cohort as ``data.csv`` plus ``manifest.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        d = cfg.data
        series, clusters = generate_synthetic(d.clusters, d.meters_per_cluster, d.train_days + d.test_days,
                                              cfg.master_seed, d.synthetic)
        write_csv(series, out / "data.csv")
        manifest = {
            "master_seed": cfg.master_seed,
            "days": d.train_days + d.test_days,
            "synthetic": cfg.to_dict()["data"]["synthetic"],
            "clusters": [{"cluster_id": c.cluster_id, "meter_ids": list(c.meter_ids)} for c in clusters],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from exc
    return manifest


# ---------------------------------------------------------------------------
# run


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_experiment(cfg: ExperimentConfig, threads: int = 1):
    """Train and evaluate every cluster; returns ``(report, round_logs)``."""
    series, clusters = load_cohort(cfg)
    d, m = cfg.data, cfg.model
    T = m.window
    n_params = param_count(m.hidden, 1)
    dense_bytes = comp.dense_size(n_params)

    splits = {}
    for c in clusters:
        for mid in c.meter_ids:
            splits[mid] = split_normalize(series[mid], d.train_days, d.test_days)

    evals, logs, comm = {}, [], []
    for c in clusters:
        init = init_params(m.hidden, 1, stream(cfg.master_seed, "init", c.cluster_id))
        windows = [make_windows(splits[mid].train_normalized, T) for mid in c.meter_ids]
        up_bytes = down_bytes = rounds = 0
        if cfg.federation.enabled:
            down = []
            g, cluster_logs = run_federated(
                c.meter_ids, windows, cfg.fed_config(), cfg.master_seed, init, threads,
                on_round=lambda g, ups, nbytes: down.append(nbytes),
            )
            params = {mid: g.params for mid in c.meter_ids}
            offset = logs[-1].cumulative_bytes if logs else 0
            logs.extend(_shift(cluster_logs, offset))
            up_bytes = sum(r.payload_bytes for r in cluster_logs)
            down_bytes = sum(down)
            rounds = g.round
        else:
            trained = _pmap(lambda w: run_local_only(w, m, init), windows, threads)
            params = dict(zip(c.meter_ids, trained))
        evals[c.cluster_id] = {}
        for mid in c.meter_ids:
            s = splits[mid]
            pred_u = forecast(params[mid], s.train_normalized, len(s.test), T, future=s.test_normalized)
            if not np.all(np.isfinite(pred_u)):
                raise NumericalError(f"meter {mid}: non-finite forecast")
            evals[c.cluster_id][mid] = ForecastEval(s.test, s.denormalize(pred_u))
        comm.append({
            "cluster_id": c.cluster_id,
            "rounds": rounds,
            "bytes_up": up_bytes,
            "bytes_down": down_bytes,
            "bytes_up_per_round": up_bytes / rounds if rounds else 0.0,
        })
    try:
        metrics = cluster_report(evals).to_dict()
    except ValueError as exc:
        raise DataError(str(exc)) from exc

    up = sum(x["bytes_up"] for x in comm)
    n_updates = sum(1 for r in logs if r.payload_bytes)
    report = {
        "schema": REPORT_SCHEMA,
        "scenario": cfg.scenario,
        "seed": cfg.master_seed,
        "config": cfg.to_dict(include_output=False),
        "param_count": n_params,
        "metrics": metrics,
        "communication": {
            "clusters": comm,
            "bytes_up": up,
            "bytes_down": sum(x["bytes_down"] for x in comm),
            "updates": n_updates,
            "dense_update_bytes": dense_bytes,
            "compression_ratio": (dense_bytes * n_updates / up) if up else None,
        },
    }
    return report, logs


def _shift(cluster_logs, offset):
    return [replace(r, cumulative_bytes=r.cumulative_bytes + offset) for r in cluster_logs]


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(report: dict, logs, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rp = out / "report.json"
    rp.write_text(dumps_report(report), encoding="utf-8")
    lp = out / "rounds.csv"
    write_round_log(logs, lp)
    return rp, lp


# ---------------------------------------------------------------------------
# compare


def _read_report(path):
    try:
        with open(path, encoding="utf-8") as fh:
            rep = json.load(fh)
        row = {
            "scenario": str(rep["scenario"]),
            "nrmse": float(rep["metrics"]["overall"]["nrmse"]),
            "mae": float(rep["metrics"]["overall"]["mae"]),
            "total_bytes": int(rep["communication"]["bytes_up"]) + int(rep["communication"]["bytes_down"]),
        }
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed report {path}: {exc}") from exc
    return row


COMPARE_COLUMNS = ("scenario", "nrmse", "mae", "total_bytes", "d_nrmse", "d_mae", "d_total_bytes")


def compare_reports(paths) -> tuple[list[dict], str, str]:
    """Side-by-side table; deltas are relative to the first report.

    Returns ``(rows, csv_text, aligned_text)``.
    """
    rows = [_read_report(p) for p in paths]
    if not rows:
        raise DataError("no reports to compare")
    first = rows[0]
    for r in rows:
        r["d_nrmse"] = r["nrmse"] - first["nrmse"]
        r["d_mae"] = r["mae"] - first["mae"]
        r["d_total_bytes"] = r["total_bytes"] - first["total_bytes"]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in rows:
        w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in COMPARE_COLUMNS])

    def fmt(c, v):
        if isinstance(v, float):
            return f"{v:+.4f}" if c.startswith("d_") else f"{v:.4f}"
        if c == "d_total_bytes":
            return f"{v:+d}"
        return str(v)

    cells = [list(COMPARE_COLUMNS)] + [[fmt(c, r[c]) for c in COMPARE_COLUMNS] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(COMPARE_COLUMNS))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(v.ljust(wd) if j == 0 else v.rjust(wd) for j, (v, wd) in enumerate(zip(row, widths))))
        if i == 0:
            lines.append("  ".join("-" * wd for wd in widths))
    return rows, buf.getvalue(), "\n".join(lines) + "\n"
