"""Per-cluster federated averaging of LSTM weight deltas.

One round: the aggregator broadcasts its global parameters, every client
trains a copy on its next segment of ``k`` windows, sends back
``local - global`` (optionally compressed), and the aggregator adds the
weighted mean of the received deltas to the global parameters.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import compression as comp
from .model import LstmParams, TrainConfig, train_segment
from .numerics import stream

__all__ = [
    "NumericalError",
    "GlobalModel",
    "ModelUpdate",
    "FedConfig",
    "RoundLog",
    "client_round",
    "aggregation_weights",
    "aggregate",
    "apply_global",
    "transmit",
    "run_federated",
    "run_local_only",
    "write_round_log",
    "ROUND_LOG_COLUMNS",
]

ROUND_LOG_COLUMNS = ("round", "epoch", "client_id", "local_loss", "payload_bytes", "cumulative_bytes")


class NumericalError(ArithmeticError):
    """Training produced a non-finite loss or parameter."""


@dataclass(frozen=True)
class GlobalModel:
    params: LstmParams
    round: int = 0


@dataclass(frozen=True)
class ModelUpdate:
    client_id: str
    round: int
    delta: np.ndarray
    sample_count: int
    local_loss: float = float("nan")
    payload_bytes: int = 0


@dataclass(frozen=True)
class FedConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    round_windows: int = 48
    weights: str = "uniform"
    compression: comp.CompressionSpec = field(default_factory=comp.CompressionSpec)

    def __post_init__(self):
        if self.round_windows < 1:
            raise ValueError("round_windows must be >= 1")
        if self.weights not in ("uniform", "samples"):
            raise ValueError(f"weights must be 'uniform' or 'samples', got {self.weights!r}")


@dataclass(frozen=True)
class RoundLog:
    round: int
    epoch: int
    client_id: str
    local_loss: float
    payload_bytes: int
    cumulative_bytes: int
    broadcast_round: int  # global round the client started from

    def row(self):
        return (self.round, self.epoch, self.client_id, repr(self.local_loss), self.payload_bytes,
                self.cumulative_bytes)


def _check_finite(vec, what):
    if not np.all(np.isfinite(vec)):
        raise NumericalError(f"non-finite values in {what}")


def client_round(client_id, global_model: GlobalModel, segment, cfg: TrainConfig) -> ModelUpdate:
    """Train a copy of the broadcast global on ``segment`` and return its delta."""
    X, y = segment
    start = global_model.params
    if len(y) == 0:
        return ModelUpdate(client_id, global_model.round, np.zeros(len(start)), 0)
    local, mean_loss = train_segment(start, (X, y), cfg)
    if not math.isfinite(mean_loss):
        raise NumericalError(f"client {client_id}: non-finite loss in round {global_model.round}")
    delta = local.vector - start.vector
    _check_finite(delta, f"client {client_id} update")
    return ModelUpdate(client_id, global_model.round, delta, len(y), mean_loss)


def transmit(update: ModelUpdate, spec: comp.CompressionSpec, master_seed: int) -> ModelUpdate:
    """Send an update over the wire; returns what the aggregator decodes.

    Mask and quantization draws come from a stream keyed by client and round,
    so every meter gets an independent mask each round.
    """
    n = update.delta.shape[0]
    if update.sample_count == 0:
        return update
    if spec.kind == "none":
        # exact float64 hand-off; billed as a dense float32 payload
        return replace(update, payload_bytes=comp.dense_size(n))
    purpose = "quant" if spec.kind == "quantize" else "mask"
    payload = comp.encode(update.delta, spec, stream(master_seed, purpose, update.client_id, update.round))
    return replace(update, delta=comp.decode(payload, n), payload_bytes=payload.byte_size)


def aggregation_weights(updates, mode: str = "uniform") -> list[float]:
    if mode == "uniform":
        return [1.0 / len(updates)] * len(updates)
    if mode == "samples":
        total = sum(u.sample_count for u in updates)
        if total == 0:
            return [1.0 / len(updates)] * len(updates)
        return [u.sample_count / total for u in updates]
    raise ValueError(f"unknown weighting mode {mode!r}")


def aggregate(updates, weights) -> np.ndarray:
    """Weighted elementwise sum of client deltas.

    Terms are combined pairwise in client order (a fixed reduction tree), so
    the result does not depend on which client finished first.
    """
    updates = list(updates)
    weights = list(weights)
    if not updates:
        raise ValueError("aggregate needs at least one update")
    if len(weights) != len(updates):
        raise ValueError(f"{len(updates)} updates but {len(weights)} weights")
    rounds = {u.round for u in updates}
    if len(rounds) != 1:
        raise ValueError(f"updates from mixed rounds {sorted(rounds)}")
    n = updates[0].delta.shape[0]
    for u in updates:
        if u.delta.shape != (n,):
            raise ValueError(f"update from {u.client_id} has {u.delta.shape[0]} entries, expected {n}")
    if not math.isclose(math.fsum(weights), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError(f"weights sum to {math.fsum(weights)}, not 1")
    terms = [w * u.delta for u, w in zip(updates, weights)]
    while len(terms) > 1:
        paired = [terms[j] + terms[j + 1] for j in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            paired.append(terms[-1])
        terms = paired
    return terms[0]


def apply_global(g: GlobalModel, delta) -> GlobalModel:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (len(g.params),):
        raise ValueError(f"delta has shape {delta.shape}, global has {len(g.params)} parameters")
    p = g.params
    return GlobalModel(LstmParams(p.vector + delta, p.H, p.D), g.round + 1)


def _segment(windows, start, k):
    X, y = windows
    return X[start:start + k], y[start:start + k]


def run_federated(
    client_ids,
    datasets,
    cfg: FedConfig,
    master_seed: int,
    init: LstmParams,
    threads: int = 1,
    on_round=None,
) -> tuple[GlobalModel, list[RoundLog]]:
    """Synchronous FedAvg over one cluster.

    ``datasets[j]`` is the ``(X, y)`` training windows of ``client_ids[j]``.
    Each epoch walks every client's windows in time order, ``k`` per round;
    a shorter final segment still gets its own round.
    """
    client_ids = list(client_ids)
    if not client_ids:
        raise ValueError("run_federated needs at least one client")
    if len(datasets) != len(client_ids):
        raise ValueError(f"{len(client_ids)} clients but {len(datasets)} datasets")
    k = cfg.round_windows
    lengths = [len(y) for _, y in datasets]
    if min(lengths) == 0:
        raise ValueError("every client needs at least one training window")
    rounds_per_epoch = -(-max(lengths) // k)
    n = len(init)
    broadcast_bytes = comp.dense_size(n)

    g = GlobalModel(init, 0)
    logs: list[RoundLog] = []
    cumulative = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def work(j, g_now, start):
        upd = client_round(client_ids[j], g_now, _segment(datasets[j], start, k), cfg.train)
        return transmit(upd, cfg.compression, master_seed)

    try:
        for epoch in range(cfg.train.epochs):
            for r in range(rounds_per_epoch):
                start = r * k
                broadcast = g
                if pool is None:
                    updates = [work(j, broadcast, start) for j in range(len(client_ids))]
                else:
                    futures = [pool.submit(work, j, broadcast, start) for j in range(len(client_ids))]
                    updates = [f.result() for f in futures]
                active = [u for u in updates if u.sample_count > 0 or cfg.weights == "uniform"]
                delta = aggregate(active, aggregation_weights(active, cfg.weights))
                _check_finite(delta, f"aggregate of round {broadcast.round}")
                g = apply_global(broadcast, delta)
                for u in updates:
                    cumulative += u.payload_bytes
                    logs.append(RoundLog(broadcast.round, epoch, u.client_id, u.local_loss, u.payload_bytes,
                                         cumulative, broadcast.round))
                if on_round is not None:
                    on_round(g, updates, broadcast_bytes * len(client_ids))
    finally:
        if pool is not None:
            pool.shutdown()
    return g, logs


def run_local_only(windows, cfg: TrainConfig, init: LstmParams) -> LstmParams:
    """Train on the meter's own windows for ``cfg.epochs`` passes; no communication."""
    X, y = windows
    if len(y) == 0:
        raise ValueError("no training windows")
    p = init
    for _ in range(cfg.epochs):
        p, mean_loss = train_segment(p, (X, y), cfg)
        if not math.isfinite(mean_loss):
            raise NumericalError("non-finite loss in local training")
    return p


def write_round_log(logs, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_LOG_COLUMNS)
        for log in logs:
            w.writerow(log.row())
