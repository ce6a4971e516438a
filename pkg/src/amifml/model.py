"""Peephole LSTM forecaster: forward pass, BPTT gradients, SGD training.

The network reads a window of ``T`` normalized readings, runs the
peephole recurrence with ``H`` hidden units and maps the last hidden state
through a linear head to a one-step-ahead prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .numerics import RngStream, ShapeError

__all__ = [
    "LstmParams",
    "Gradients",
    "LstmState",
    "TrainConfig",
    "param_count",
    "init_params",
    "forward",
    "loss",
    "backward",
    "clip_gradients",
    "sgd_step",
    "train_segment",
    "forecast",
    "predict_windows",
]

GATE_NAMES = ("f", "i", "z", "o")
PEEPHOLE_NAMES = ("f", "i", "o")


def param_count(H: int, D: int = 1) -> int:
    return 4 * H * D + 4 * H * H + 3 * H + 4 * H + H + 1


class LstmParams:
    """All weights of one forecaster, stored as a single flat vector.

    Named attributes (``W_f``, ``R_o``, ``P_i``, ``b_z``, ``head_w``,
    ``head_b``, ...) are read-only views into that vector. Operations never
    mutate a parameter set in place; they return a new one.
    """

    __slots__ = ("H", "D", "_vec")

    def __init__(self, vector, H: int, D: int = 1):
        vec = np.array(vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != param_count(H, D):
            raise ShapeError(f"expected {param_count(H, D)} parameters for H={H}, D={D}, got shape {vec.shape}")
        vec.setflags(write=False)
        self.H = H
        self.D = D
        self._vec = vec

    @classmethod
    def zeros(cls, H: int, D: int = 1):
        return cls(np.zeros(param_count(H, D)), H, D)

    @classmethod
    def unflatten(cls, vector, H: int, D: int = 1):
        return cls(vector, H, D)

    def flatten(self) -> np.ndarray:
        return self._vec.copy()

    @property
    def vector(self) -> np.ndarray:
        """Read-only flat view (no copy)."""
        return self._vec

    def __len__(self):
        return self._vec.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LstmParams):
            return NotImplemented
        return (self.H, self.D) == (other.H, other.D) and np.array_equal(self._vec, other._vec)

    def __repr__(self):
        return f"{type(self).__name__}(H={self.H}, D={self.D}, n={len(self)})"

    def _block(self, start, stop, shape):
        return self._vec[start:stop].reshape(shape)

    def _offsets(self):
        H, D = self.H, self.D
        o_w = 0
        o_r = o_w + 4 * H * D
        o_p = o_r + 4 * H * H
        o_b = o_p + 3 * H
        o_hw = o_b + 4 * H
        o_hb = o_hw + H
        return o_w, o_r, o_p, o_b, o_hw, o_hb

    @property
    def W(self):
        o = self._offsets()
        return self._block(o[0], o[1], (4, self.H, self.D))

    @property
    def R(self):
        o = self._offsets()
        return self._block(o[1], o[2], (4, self.H, self.H))

    @property
    def P(self):
        o = self._offsets()
        return self._block(o[2], o[3], (3, self.H))

    @property
    def b(self):
        o = self._offsets()
        return self._block(o[3], o[4], (4, self.H))

    @property
    def head_w(self):
        o = self._offsets()
        return self._vec[o[4]:o[5]]

    @property
    def head_b(self) -> float:
        return float(self._vec[-1])

    def fields(self) -> dict[str, np.ndarray]:
        """Every named tensor, keyed as ``W_f``, ``R_i``, ``P_o``, ``b_z``, ..."""
        out = {}
        for g, name in enumerate(GATE_NAMES):
            out[f"W_{name}"] = self.W[g]
            out[f"R_{name}"] = self.R[g]
            out[f"b_{name}"] = self.b[g]
        for g, name in enumerate(PEEPHOLE_NAMES):
            out[f"P_{name}"] = self.P[g]
        out["head_w"] = self.head_w
        out["head_b"] = self._vec[-1:]
        return out

    def __getattr__(self, name):
        # W_f, R_o, P_i, b_z ...
        if len(name) == 3 and name[1] == "_" and name[0] in "WRPb":
            kind, gate = name[0], name[2]
            names = PEEPHOLE_NAMES if kind == "P" else GATE_NAMES
            if gate in names:
                return getattr(self, kind)[names.index(gate)]
        raise AttributeError(name)


class Gradients(LstmParams):
    """Same layout as :class:`LstmParams`, holding d(loss)/d(parameter)."""

    __slots__ = ()


@dataclass(frozen=True)
class LstmState:
    """Cached activations of one forward pass.

    Gate arrays have shape (T, H); ``c`` and ``h`` have shape (T + 1, H)
    with row 0 the zero initial state.
    """

    x: np.ndarray
    f: np.ndarray
    i: np.ndarray
    z: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray
    tanh_c: np.ndarray
    prediction: float
    params: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 50
    window: int = 48
    learning_rate: float = 0.01
    epochs: int = 4
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.hidden < 1 or self.window < 1 or self.epochs < 1:
            raise ValueError("hidden, window and epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive or None")


def init_params(H: int, D: int = 1, rng: RngStream | None = None) -> LstmParams:
    """Xavier-uniform weights, zero peepholes and biases, forget bias 1."""
    if H < 1 or D < 1:
        raise ValueError("H and D must be >= 1")
    if rng is None:
        rng = RngStream(0, ("init",))
    vec = np.zeros(param_count(H, D))
    o_w, o_r, o_p, o_b, o_hw, _ = _kernels.offsets(H, D)
    a_in = math.sqrt(6.0 / (D + H))
    vec[o_w:o_r] = rng.uniform_range(-a_in, a_in, 4 * H * D)
    a_rec = math.sqrt(6.0 / (H + H))
    vec[o_r:o_p] = rng.uniform_range(-a_rec, a_rec, 4 * H * H)
    vec[o_b:o_b + H] = 1.0
    a_head = math.sqrt(6.0 / (H + 1))
    vec[o_hw:o_hw + H] = rng.uniform_range(-a_head, a_head, H)
    return LstmParams(vec, H, D)


def _check_window(p: LstmParams, x) -> np.ndarray:
    if p.D != 1:
        raise ValueError("only single-feature inputs (D=1) are supported")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ShapeError(f"window must be a non-empty 1-d sequence, got shape {x.shape}")
    return x


def forward(p: LstmParams, x) -> tuple[float, LstmState]:
    x = _check_window(p, x)
    T, H = x.shape[0], p.H
    f, i, z, o, tc = (np.empty((T, H)) for _ in range(5))
    c = np.empty((T + 1, H))
    h = np.empty((T + 1, H))
    pred = _kernels.forward(p.vector, H, x, f, i, z, o, c, h, tc)
    return pred, LstmState(x, f, i, z, o, c, h, tc, pred, p.vector)


def loss(prediction: float, target: float) -> float:
    return (prediction - target) ** 2


def backward(p: LstmParams, x, target: float, state: LstmState) -> Gradients:
    """Exact gradient of the squared error for the window cached in ``state``."""
    if state is None:
        raise ValueError("backward needs the state from forward()")
    x = _check_window(p, x)
    if not (np.array_equal(state.x, x) and np.array_equal(state.params, p.vector)):
        raise ValueError("stale state: it was produced for different parameters or input")
    grad = np.empty(len(p))
    _kernels.backward(p.vector, p.H, x, float(target), state.prediction, state.f, state.i, state.z,
                      state.o, state.c, state.h, state.tanh_c, grad)
    return Gradients(grad, p.H, p.D)


def clip_gradients(g: Gradients, max_norm: float | None) -> Gradients:
    if max_norm is None:
        return g
    vec = g.flatten()
    _kernels.clip(vec, float(max_norm))
    return Gradients(vec, g.H, g.D)


def sgd_step(p: LstmParams, g: Gradients, lr: float) -> LstmParams:
    if len(g) != len(p):
        raise ShapeError(f"gradient has {len(g)} entries, params have {len(p)}")
    out = np.empty(len(p))
    _kernels.sgd(p.vector, g.vector, float(lr), out)
    return LstmParams(out, p.H, p.D)


def train_segment(p: LstmParams, windows, cfg: TrainConfig) -> tuple[LstmParams, float]:
    """One time-ordered SGD pass, a step per window.

    ``windows`` is an ``(X, y)`` pair with ``X`` of shape (n, T), as returned
    by :func:`amifml.data.make_windows`. Returns the updated parameters and
    the mean loss measured before each step.
    """
    X, y = windows
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("train_segment needs at least one window")
    if y.shape != (X.shape[0],):
        raise ShapeError(f"{X.shape[0]} windows but {y.shape} targets")
    if p.D != 1:
        raise ValueError("only single-feature inputs (D=1) are supported")
    clip = 0.0 if cfg.clip_norm is None else float(cfg.clip_norm)
    vec, mean_loss = _kernels.train(p.vector, p.H, X, y, float(cfg.learning_rate), clip)
    return LstmParams(vec, p.H, p.D), float(mean_loss)


def predict_windows(p: LstmParams, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected (n, T) windows, got shape {X.shape}")
    if X.shape[0] == 0:
        return np.empty(0)
    return _kernels.predict(p.vector, p.H, X)


def forecast(p: LstmParams, history, horizon: int, T: int, future=None) -> np.ndarray:
    """Teacher-forced rolling one-step forecasts.

    Prediction ``m`` is made from the ``T`` true values ending ``m`` steps
    past the end of ``history``; those extra values come from ``future``
    (the actuals), which must hold at least ``horizon - 1`` readings.
    Predictions are never fed back as inputs.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.shape[0] < T:
        raise ValueError(f"forecast needs at least T={T} history values, got {history.shape[0]}")
    if horizon <= 0:
        return np.empty(0)
    if horizon > 1:
        future = np.asarray([] if future is None else future, dtype=np.float64)
        if future.shape[0] < horizon - 1:
            raise ValueError(f"horizon {horizon} needs {horizon - 1} future actuals, got {future.shape[0]}")
        series = np.concatenate([history[-T:], future[: horizon - 1]])
    else:
        series = history[-T:]
    X = np.lib.stride_tricks.sliding_window_view(series, T)
    return predict_windows(p, X)
