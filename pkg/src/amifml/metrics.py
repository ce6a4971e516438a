"""Forecast error metrics and per-cluster averaging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DegenerateRangeError", "ForecastEval", "ClusterReport", "nrmse", "mae", "cluster_report"]


class DegenerateRangeError(ValueError):
    """Actual values have zero range, so NRMSE is undefined."""


@dataclass(frozen=True)
class ForecastEval:
    actual: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.actual, dtype=np.float64)
        yhat = np.asarray(self.predicted, dtype=np.float64)
        if y.ndim != 1 or y.shape != yhat.shape:
            raise ValueError(f"actual {y.shape} and predicted {yhat.shape} must be equal-length vectors")
        if y.shape[0] < 1:
            raise ValueError("need at least one forecast")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
            raise ValueError("forecast values must be finite")
        object.__setattr__(self, "actual", y)
        object.__setattr__(self, "predicted", yhat)


def nrmse(e: ForecastEval) -> float:
    """Root-mean-square error divided by the range of the actuals."""
    span = float(e.actual.max() - e.actual.min())
    if span <= 0:
        raise DegenerateRangeError("actual consumption is constant; NRMSE undefined")
    return float(np.sqrt(np.mean((e.actual - e.predicted) ** 2)) / span)


def mae(e: ForecastEval) -> float:
    return float(np.mean(np.abs(e.actual - e.predicted)))


@dataclass(frozen=True)
class ClusterReport:
    per_meter: dict  # cluster id -> {meter id: {"nrmse": .., "mae": ..}}
    cluster_means: dict  # cluster id -> {"nrmse": .., "mae": ..}
    overall: dict  # {"nrmse": .., "mae": ..}

    def to_dict(self) -> dict:
        return {
            "clusters": [
                {"cluster_id": cid, **self.cluster_means[cid], "meters": self.per_meter[cid]}
                for cid in self.per_meter
            ],
            "overall": dict(self.overall),
        }


def cluster_report(groups: dict) -> ClusterReport:
    """Average per-meter metrics within each cluster, then across clusters.

    ``groups`` maps cluster id to ``{meter id: ForecastEval}``. The overall
    figure weights every cluster equally.
    """
    if not groups:
        raise ValueError("no clusters to report")
    per_meter, means = {}, {}
    for cid, evals in groups.items():
        if not evals:
            raise ValueError(f"cluster {cid} has no meters")
        per_meter[cid] = {mid: {"nrmse": nrmse(e), "mae": mae(e)} for mid, e in evals.items()}
        means[cid] = {
            key: float(np.mean([m[key] for m in per_meter[cid].values()])) for key in ("nrmse", "mae")
        }
    overall = {key: float(np.mean([m[key] for m in means.values()])) for key in ("nrmse", "mae")}
    return ClusterReport(per_meter, means, overall)
