"""From a CSV of half-hourly readings to normalized training windows."""

# %%
import tempfile
from pathlib import Path

import numpy as np

from amifml.data import clean, generate_synthetic, ingest_csv, make_windows, split_normalize, write_csv

series, clusters = generate_synthetic(n_clusters=2, meters_per_cluster=2, days=10, master_seed=7)
print("clusters:", [c.meter_ids for c in clusters])

# %% Write, damage a few rows, read back
tmp = Path(tempfile.mkdtemp())
write_csv(series, tmp / "meters.csv")
lines = (tmp / "meters.csv").read_text().splitlines()
lines[5] = lines[5].rsplit(",", 1)[0] + ",nan"  # day 0 of the first meter
del lines[48 * 3 + 10]  # a missing slot on day 3
(tmp / "meters.csv").write_text("\n".join(lines) + "\n")

loaded = ingest_csv(tmp / "meters.csv")
first = clean(loaded[0])
print("days kept for", first.meter_id, sorted(set(first.days.tolist())))

# %% Split by days, scale with training min/max, slide windows
split = split_normalize(first, train_days=6, test_days=2)
print(f"train {len(split.train)} points in [{split.norm_min:.3f}, {split.norm_max:.3f}] kWh, test {len(split.test)}")
X, y = make_windows(split.train_normalized, 48)
print("windows:", X.shape, "targets:", y.shape)
print("denormalize round-trip ok:", np.allclose(split.denormalize(split.train_normalized), split.train))
