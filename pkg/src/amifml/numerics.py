"""Dense linear-algebra helpers, activations and seeded random streams.

Matrices and vectors are plain float64 numpy arrays. The helpers here add
the shape checking the rest of the package relies on; heavy lifting inside
the LSTM is done by the compiled kernels.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeError",
    "as_matrix",
    "as_vector",
    "matvec",
    "elementwise",
    "sigmoid",
    "tanh",
    "RngStream",
    "stream",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.array(data, dtype=np.float64, ndmin=2)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise ShapeError(f"expected matrix {rows}x{cols}, got {m.shape[0]}x{m.shape[1]}")
    return m


def as_vector(data, length: int | None = None) -> np.ndarray:
    v = np.array(data, dtype=np.float64, ndmin=1)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ShapeError(f"expected vector of length {length}, got {v.shape[0]}")
    return v


def matvec(m, v) -> np.ndarray:
    """Return ``m @ v`` after checking ``m.cols == len(v)``."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: matrix {m.shape[0]}x{m.shape[1]} vs vector of length {v.shape[0]}")
    return m @ v


_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op: str, a, b) -> np.ndarray:
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_OPS)}") from None
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} vs {b.shape}")
    return fn(a, b)


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def tanh(x):
    out = np.tanh(np.asarray(x, dtype=np.float64))
    return out[()] if out.ndim == 0 else out


def _tag(value) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value) & 0xFFFFFFFFFFFFFFFF
    # crc32 rather than hash(): str hashing is salted per process
    return zlib.crc32(str(value).encode("utf-8"))


@dataclass
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    The Philox key is derived from the pair, so a stream is reproducible on
    any platform and distinct ids give independent sequences. A stream
    instance is stateful; create one per consumer.
    """

    seed: int
    stream_id: tuple = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        words = [_tag(self.seed)] + [_tag(p) for p in self.stream_id]
        ss = np.random.SeedSequence(words)
        self._gen = np.random.Generator(np.random.Philox(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, size=None):
        """Draws in [0, 1)."""
        return self._gen.random(size)

    def uniform_range(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def shuffle(self, n: int) -> np.ndarray:
        """Uniformly random permutation of ``0 .. n-1``."""
        return self._gen.permutation(n)


def stream(seed: int, purpose: str, client=0, round_index: int = 0) -> RngStream:
    """Stream for one (purpose, client, round) consumer under a master seed."""
    return RngStream(seed, (purpose, client, round_index))
