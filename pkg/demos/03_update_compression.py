"""Shrinking client updates: random masks and stochastic quantization."""

# %%
import numpy as np

from amifml.compression import CompressionSpec, decode, dense_size, encode, quantize, dequantize
from amifml.model import param_count
from amifml.numerics import RngStream

n = param_count(50, 1)
delta = np.random.default_rng(0).normal(0, 1e-3, n)
print(f"{n} parameters, dense payload {dense_size(n)} bytes")

# %% Wire sizes and reconstruction error per scheme
for spec in [CompressionSpec("dense"), *(CompressionSpec("mask", keep_fraction=k) for k in (0.10, 0.05, 0.02)),
             *(CompressionSpec("quantize", bits=b) for b in (1, 2, 4, 8))]:
    payload = encode(delta, spec, RngStream(1, ("demo", spec.label)))
    back = decode(payload, n)
    err = np.linalg.norm(back - delta) / np.linalg.norm(delta)
    print(f"{spec.label:>9}: {payload.byte_size:6d} bytes  x{dense_size(n) / payload.byte_size:5.1f}  rel err {err:.3f}")

# %% Quantization is unbiased: averaging many decodes recovers the input
v = np.array([-1.0, -0.3, 0.1, 0.8, 1.0])
mean = np.mean([dequantize(quantize(v, 1, RngStream(2, (d,)))) for d in range(20_000)], axis=0)
print("input  ", v)
print("average", np.round(mean, 3))
