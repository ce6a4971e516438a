"""Smart-meter series: CSV ingestion, cleaning, splitting, windowing and a
seeded synthetic cohort generator.

CSV schema (header required, UTF-8, LF or CRLF)::

    meter_id,day_index,halfhour_slot,kwh

with ``halfhour_slot`` in 1..48.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import stream

__all__ = [
    "SLOTS_PER_DAY",
    "CSV_HEADER",
    "DataError",
    "MeterSeries",
    "SplitSeries",
    "Cluster",
    "SyntheticProfile",
    "SyntheticConfig",
    "ingest_csv",
    "write_csv",
    "clean",
    "split_normalize",
    "make_windows",
    "assign_clusters",
    "draw_profile",
    "generate_synthetic",
]

SLOTS_PER_DAY = 48
CSV_HEADER = ("meter_id", "day_index", "halfhour_slot", "kwh")


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(eq=False)
class MeterSeries:
    """Half-hourly readings for one meter, in (day, slot) order.

    ``days`` and ``slots`` (1-based) locate every reading; they let
    :func:`clean` find incomplete days.
    """

    meter_id: str
    readings: np.ndarray
    days: np.ndarray
    slots: np.ndarray

    def __post_init__(self):
        self.readings = np.asarray(self.readings, dtype=np.float64)
        self.days = np.asarray(self.days, dtype=np.int64)
        self.slots = np.asarray(self.slots, dtype=np.int64)
        if not (self.readings.shape == self.days.shape == self.slots.shape):
            raise DataError(f"meter {self.meter_id}: readings/days/slots lengths differ")

    @classmethod
    def from_days(cls, meter_id: str, readings, start_day: int = 0):
        """Series of whole consecutive days starting at ``start_day``."""
        readings = np.asarray(readings, dtype=np.float64)
        n_days, rem = divmod(readings.shape[0], SLOTS_PER_DAY)
        if rem:
            raise DataError(f"meter {meter_id}: {readings.shape[0]} readings is not a whole number of days")
        days = np.repeat(np.arange(start_day, start_day + n_days), SLOTS_PER_DAY)
        slots = np.tile(np.arange(1, SLOTS_PER_DAY + 1), n_days)
        return cls(meter_id, readings, days, slots)

    @property
    def start_day(self) -> int | None:
        return int(self.days[0]) if self.days.size else None

    def __len__(self):
        return self.readings.shape[0]

    def __eq__(self, other):
        if not isinstance(other, MeterSeries):
            return NotImplemented
        return (
            self.meter_id == other.meter_id
            and np.array_equal(self.readings, other.readings, equal_nan=True)
            and np.array_equal(self.days, other.days)
            and np.array_equal(self.slots, other.slots)
        )


@dataclass(frozen=True)
class SplitSeries:
    train: np.ndarray
    test: np.ndarray
    norm_min: float
    norm_max: float

    def normalize(self, x):
        x = np.asarray(x, dtype=np.float64)
        span = self.norm_max - self.norm_min
        if span == 0:
            return np.full_like(x, 0.5)
        return (x - self.norm_min) / span

    def denormalize(self, u):
        u = np.asarray(u, dtype=np.float64)
        span = self.norm_max - self.norm_min
        if span == 0:
            return np.full_like(u, self.norm_min)
        return u * span + self.norm_min

    @property
    def train_normalized(self) -> np.ndarray:
        return self.normalize(self.train)

    @property
    def test_normalized(self) -> np.ndarray:
        return self.normalize(self.test)


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    meter_ids: tuple[str, ...]


def _parse_row(row, lineno):
    if len(row) != 4:
        raise DataError(f"line {lineno}: expected 4 fields, got {len(row)}: {row!r}")
    meter, day, slot, kwh = (s.strip() for s in row)
    if not meter:
        raise DataError(f"line {lineno}: empty meter_id")
    try:
        day = int(day)
        slot = int(slot)
    except ValueError:
        raise DataError(f"line {lineno}: day_index and halfhour_slot must be integers: {row!r}") from None
    if not 1 <= slot <= SLOTS_PER_DAY:
        raise DataError(f"line {lineno}: halfhour_slot {slot} outside 1..{SLOTS_PER_DAY}")
    try:
        value = float(kwh)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric kwh {kwh!r}") from None
    return meter, day, slot, value


def ingest_csv(path) -> list[MeterSeries]:
    """Read the ingestion CSV into one series per meter, sorted by meter id.

    Non-finite kWh values (``nan``, ``inf``) parse and are left for
    :func:`clean` to drop.
    """
    rows: dict[str, dict[tuple[int, int], float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"line 1: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            meter, day, slot, value = _parse_row(row, lineno)
            cells = rows.setdefault(meter, {})
            if (day, slot) in cells:
                raise DataError(f"line {lineno}: duplicate reading for meter {meter}, day {day}, slot {slot}")
            cells[(day, slot)] = value
    out = []
    for meter in sorted(rows):
        keys = sorted(rows[meter])
        out.append(MeterSeries(
            meter,
            [rows[meter][k] for k in keys],
            [k[0] for k in keys],
            [k[1] for k in keys],
        ))
    return out


def write_csv(series: list[MeterSeries], path) -> None:
    """Write series in the ingestion schema; floats round-trip exactly."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for s in series:
            lines = [
                f"{s.meter_id},{d},{sl},{r!r}\n"
                for d, sl, r in zip(s.days.tolist(), s.slots.tolist(), s.readings.tolist())
            ]
            fh.writelines(lines)


def clean(series: MeterSeries) -> MeterSeries:
    """Drop every day that is incomplete or holds a negative or non-finite reading."""
    if len(series) == 0:
        return series
    r = series.readings
    bad = ~np.isfinite(r) | (r < 0)
    keep = np.zeros(len(series), dtype=bool)
    # ingest sorts by (day, slot); guard against hand-built series that don't
    order = np.lexsort((series.slots, series.days))
    days = series.days[order]
    bad = bad[order]
    _, start, counts = np.unique(days, return_index=True, return_counts=True)
    slot_sets = series.slots[order]
    for d0, n in zip(start, counts):
        day_slots = slot_sets[d0:d0 + n]
        if n == SLOTS_PER_DAY and not bad[d0:d0 + n].any() and np.unique(day_slots).size == SLOTS_PER_DAY:
            keep[d0:d0 + n] = True
    return MeterSeries(series.meter_id, r[order][keep], days[keep], slot_sets[keep])


def split_normalize(series, train_days: int, test_days: int) -> SplitSeries:
    """First ``train_days`` whole days for training, the next ``test_days`` for testing.

    Min-max bounds come from the training part only, so test values may
    fall outside [0, 1].
    """
    r = series.readings if isinstance(series, MeterSeries) else np.asarray(series, dtype=np.float64)
    n_train = train_days * SLOTS_PER_DAY
    n_test = test_days * SLOTS_PER_DAY
    if r.shape[0] < n_train + n_test:
        raise DataError(
            f"series has {r.shape[0]} readings, need {n_train + n_test} for a {train_days}/{test_days}-day split"
        )
    if n_train == 0:
        raise DataError("train_days must be >= 1")
    train = r[:n_train].copy()
    test = r[n_train:n_train + n_test].copy()
    return SplitSeries(train, test, float(train.min()), float(train.max()))


def make_windows(values, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows ``X[k] = values[k:k+T]`` with targets ``y[k] = values[k+T]``."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < T + 1:
        raise DataError(f"need at least T+1={T + 1} values for one window, got {values.shape[0]}")
    X = np.lib.stride_tricks.sliding_window_view(values[:-1], T)
    return X, values[T:]


def assign_clusters(meter_ids, n_clusters: int, meters_per_cluster: int) -> list[Cluster]:
    """Consecutive blocks of ``meters_per_cluster`` meters, in the given order."""
    meter_ids = list(meter_ids)
    need = n_clusters * meters_per_cluster
    if n_clusters < 1 or meters_per_cluster < 1:
        raise DataError("n_clusters and meters_per_cluster must be >= 1")
    if len(meter_ids) < need:
        raise DataError(f"{n_clusters} clusters x {meters_per_cluster} meters needs {need} meters, have {len(meter_ids)}")
    return [
        Cluster(c, tuple(meter_ids[c * meters_per_cluster:(c + 1) * meters_per_cluster]))
        for c in range(n_clusters)
    ]


# ---------------------------------------------------------------------------
# synthetic cohort


@dataclass(frozen=True)
class SyntheticProfile:
    """Household load profile; magnitudes in kWh per half-hour."""

    base_load: float
    daily_amplitude: float
    evening_peak_weight: float
    weekend_factor: float
    motifs: tuple[tuple[int, int, float], ...]  # (start slot 0..47, duration, height)
    motif_probability: float
    noise_sigma: float
    cluster_weight: float

    def __post_init__(self):
        mags = (self.base_load, self.daily_amplitude, self.evening_peak_weight, self.weekend_factor,
                self.noise_sigma, self.cluster_weight, self.motif_probability)
        if any(m < 0 for m in mags) or any(h < 0 or d < 0 for _, d, h in self.motifs):
            raise ValueError("synthetic profile magnitudes must be nonnegative")


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the generator; zeroing a term removes it from every meter."""

    noise: float = 3.0  # multiplies the per-meter sigma draw (0.02-0.06 kWh)
    motifs: bool = True
    weekend: bool = True
    cluster_day_sigma: float = 0.25
    cluster_weight: tuple[float, float] = (0.6, 1.0)


_SLOT_HOURS = (np.arange(SLOTS_PER_DAY) + 0.5) / 2.0


def _bump(center_h: float, width_h: float) -> np.ndarray:
    d = np.abs(_SLOT_HOURS - center_h)
    d = np.minimum(d, 24.0 - d)
    return np.exp(-0.5 * (d / width_h) ** 2)


def _daily_shape(morning_h, evening_h, evening_weight):
    return 0.6 * _bump(morning_h, 1.2) + evening_weight * _bump(evening_h, 1.8)


def draw_profile(rng, cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticProfile:
    n_motifs = int(rng.integers(1, 4)) if cfg.motifs else 0
    motifs = tuple(
        (int(rng.integers(12, 46)), int(rng.integers(2, 5)), float(rng.uniform_range(0.1, 0.5)))
        for _ in range(n_motifs)
    )
    return SyntheticProfile(
        base_load=float(rng.uniform_range(0.05, 0.25)),
        daily_amplitude=float(rng.uniform_range(0.1, 0.4)),
        evening_peak_weight=float(rng.uniform_range(0.8, 1.6)),
        weekend_factor=float(rng.uniform_range(0.0, 0.15)) if cfg.weekend else 0.0,
        motifs=motifs,
        motif_probability=float(rng.uniform_range(0.3, 0.8)),
        noise_sigma=float(rng.uniform_range(0.02, 0.06)) * cfg.noise,
        cluster_weight=float(rng.uniform_range(*cfg.cluster_weight)),
    )


def _meter_readings(profile: SyntheticProfile, days: int, shared: np.ndarray, rng) -> np.ndarray:
    own = profile.daily_amplitude * _daily_shape(7.5, 19.0, profile.evening_peak_weight)
    load = np.tile(profile.base_load + own, (days, 1))
    load += profile.cluster_weight * shared
    if profile.weekend_factor:
        weekend = (np.arange(days) % 7) >= 5
        load[weekend] += profile.weekend_factor * _bump(13.0, 3.0)
    for start, dur, height in profile.motifs:
        on = rng.uniform(days) < profile.motif_probability
        for s in range(start, min(start + dur, SLOTS_PER_DAY)):
            load[on, s] += height
    if profile.noise_sigma:
        load += rng.normal(0.0, profile.noise_sigma, size=load.shape)
    return np.maximum(load, 0.0).ravel()


def _cluster_component(days: int, cfg: SyntheticConfig, rng) -> np.ndarray:
    """Shape shared by every meter in a cluster, modulated day to day."""
    morning = float(rng.uniform_range(6.5, 8.5))
    evening = float(rng.uniform_range(17.5, 20.5))
    shape = 0.25 * _daily_shape(morning, evening, float(rng.uniform_range(1.0, 1.5)))
    if cfg.cluster_day_sigma:
        # slowly varying common factor, e.g. weather; AR(1) around 1
        level = np.empty(days)
        prev = 0.0
        eps = rng.normal(0.0, cfg.cluster_day_sigma, size=days)
        for d in range(days):
            prev = 0.8 * prev + math.sqrt(1 - 0.8 ** 2) * eps[d]
            level[d] = max(0.0, 1.0 + prev)
    else:
        level = np.ones(days)
    return level[:, None] * shape[None, :]


def generate_synthetic(
    n_clusters: int,
    meters_per_cluster: int,
    days: int,
    master_seed: int,
    cfg: SyntheticConfig = SyntheticConfig(),
) -> tuple[list[MeterSeries], list[Cluster]]:
    """Seeded synthetic cohort whose clusters share a common daily component."""
    if n_clusters < 1 or meters_per_cluster < 1 or days < 1:
        raise DataError("n_clusters, meters_per_cluster and days must all be >= 1")
    series, clusters = [], []
    width = len(str(n_clusters * meters_per_cluster - 1))
    for c in range(n_clusters):
        shared = _cluster_component(days, cfg, stream(master_seed, "cluster", c))
        ids = []
        for m in range(meters_per_cluster):
            meter_id = f"m{c * meters_per_cluster + m:0{width}d}"
            profile = draw_profile(stream(master_seed, "profile", meter_id), cfg)
            readings = _meter_readings(profile, days, shared, stream(master_seed, "noise", meter_id))
            series.append(MeterSeries.from_days(meter_id, readings))
            ids.append(meter_id)
        clusters.append(Cluster(c, tuple(ids)))
    return series, clusters
