"""Federated averaging within one cluster of meters."""

# %%
import numpy as np

from amifml.data import generate_synthetic, make_windows, split_normalize
from amifml.federation import FedConfig, run_federated, run_local_only
from amifml.metrics import ForecastEval, nrmse
from amifml.model import TrainConfig, forecast, init_params
from amifml.numerics import stream

series, clusters = generate_synthetic(n_clusters=1, meters_per_cluster=6, days=24, master_seed=3)
meters = clusters[0].meter_ids
splits = {s.meter_id: split_normalize(s, 21, 3) for s in series}
T = 48
windows = [make_windows(splits[m].train_normalized, T) for m in meters]
print(f"{len(meters)} meters, {len(windows[0][1])} training windows each")

# %% Shared init, then local-only vs one global model updated once per day of data
train = TrainConfig(hidden=12, window=T, epochs=2)
init = init_params(12, 1, stream(3, "init", 0))
local = {m: run_local_only(w, train, init) for m, w in zip(meters, windows)}


def show(g, updates, down_bytes):
    if g.round % 10 == 0:
        print(f"  round {g.round:3d}: mean client loss {np.mean([u.local_loss for u in updates]):.5f}")


fed, logs = run_federated(meters, windows, FedConfig(train, round_windows=48), 3, init, on_round=show)
print("rounds run:", fed.round, "| uplink bytes:", logs[-1].cumulative_bytes)

# %% Score both on the held-out days, in kWh
def score(params_for):
    out = []
    for m in meters:
        s = splits[m]
        pred = forecast(params_for(m), s.train_normalized, len(s.test), T, future=s.test_normalized)
        out.append(nrmse(ForecastEval(s.test, s.denormalize(pred))))
    return np.mean(out)


print(f"local NRMSE {score(local.get):.4f}   federated NRMSE {score(lambda m: fed.params):.4f}")
