"""Peephole LSTM forecaster: one forward pass, BPTT, and a finite-difference check."""

# %%
import numpy as np

from amifml.model import LstmParams, TrainConfig, backward, forward, init_params, loss, param_count, train_segment
from amifml.data import make_windows
from amifml.numerics import RngStream

print("parameters at H=50:", param_count(50, 1))

# %% A small model and one window of six readings
p = init_params(3, 1, RngStream(0, ("demo",)))
x = np.array([0.2, 0.4, 0.9, 0.7, 0.3, 0.1])
pred, state = forward(p, x)
print(f"prediction {pred:.4f}; hidden state after the window {np.round(state.h[-1], 4)}")

# %% Analytic gradient against central differences
g = backward(p, x, 0.25, state).flatten()
vec, eps = p.flatten(), 1e-5
fd = np.empty_like(vec)
for j in range(vec.size):
    up, dn = vec.copy(), vec.copy()
    up[j] += eps
    dn[j] -= eps
    fd[j] = (loss(forward(LstmParams(up, 3), x)[0], 0.25) - loss(forward(LstmParams(dn, 3), x)[0], 0.25)) / (2 * eps)
print("largest |analytic - numeric|:", np.max(np.abs(g - fd)))

# %% A few epochs of SGD on a noisy daily-ish curve
t = np.arange(400)
series = 0.5 + 0.4 * np.sin(2 * np.pi * t / 48) + 0.03 * np.random.default_rng(1).normal(size=t.size)
X, y = make_windows(series, 12)
cfg = TrainConfig(hidden=8, window=12, learning_rate=0.05, epochs=1)
model = init_params(8, 1, RngStream(1, ("demo",)))
for epoch in range(5):
    model, mean_loss = train_segment(model, (X, y), cfg)
    print(f"epoch {epoch}: mean window loss {mean_loss:.5f}")
