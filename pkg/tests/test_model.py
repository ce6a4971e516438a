import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amifml.model import (
    Gradients,
    LstmParams,
    TrainConfig,
    backward,
    clip_gradients,
    forecast,
    forward,
    init_params,
    loss,
    param_count,
    predict_windows,
    sgd_step,
    train_segment,
)
from amifml.numerics import RngStream, ShapeError, sigmoid

from conftest import fd_gradient, max_rel_error, random_instance, reference_forward


def test_param_count():
    assert param_count(50, 1) == 10_601
    assert len(init_params(50, 1)) == 10_601
    assert param_count(3, 2) == 4 * 3 * 2 + 4 * 9 + 3 * 3 + 4 * 3 + 3 + 1


def test_init_determinism_and_conventions():
    a = init_params(8, 1, RngStream(3, ("init",)))
    b = init_params(8, 1, RngStream(3, ("init",)))
    assert a == b
    np.testing.assert_array_equal(a.b_f, np.ones(8))
    for name in ("b_i", "b_z", "b_o", "P_f", "P_i", "P_o"):
        np.testing.assert_array_equal(getattr(a, name), np.zeros(8))
    assert a.head_b == 0.0
    lim = math.sqrt(6 / (1 + 8))
    assert np.all(np.abs(a.W) <= lim)
    assert np.all(np.abs(a.R) <= math.sqrt(6 / 16))
    assert a != init_params(8, 1, RngStream(4, ("init",)))


def test_flatten_roundtrip_and_views():
    p, _, _ = random_instance(3, 5, 1)
    v = p.flatten()
    assert np.array_equal(LstmParams.unflatten(v, 3).flatten(), v)
    f = p.fields()
    assert set(f) == {"W_f", "W_i", "W_z", "W_o", "R_f", "R_i", "R_z", "R_o", "P_f", "P_i", "P_o",
                      "b_f", "b_i", "b_z", "b_o", "head_w", "head_b"}
    assert sum(t.size for t in f.values()) == len(p)
    assert f["R_z"].shape == (3, 3)
    assert f["W_o"].shape == (3, 1)
    with pytest.raises(ValueError):
        p.vector[0] = 1.0  # read-only
    with pytest.raises(ShapeError):
        LstmParams(np.zeros(10), 3)


@given(st.integers(1, 6))
def test_unflatten_flatten_property(H):
    v = np.random.default_rng(H).normal(size=param_count(H))
    assert np.array_equal(LstmParams.unflatten(v, H).flatten(), v)


def test_zero_params_forward():
    p = LstmParams.zeros(4)
    pred, st_ = forward(p, np.random.default_rng(0).uniform(size=6))
    assert pred == 0.0
    np.testing.assert_array_equal(st_.h, 0.0)
    np.testing.assert_array_equal(st_.c, 0.0)


def test_scalar_hand_example():
    # H=1, all weights 1, biases and peepholes 0, single step x=1
    H = 1
    vec = np.zeros(param_count(H))
    v = LstmParams.zeros(H)
    o = v._offsets()
    vec[o[0]:o[2]] = 1.0  # W and R blocks
    vec[o[4]:o[5]] = 1.0  # head_w
    p = LstmParams(vec, H)
    pred, s = forward(p, [1.0])
    s1 = 1 / (1 + math.exp(-1))
    c = math.tanh(1) * s1
    h = math.tanh(c) * s1
    # independently evaluated: f = i = o = sigmoid(1), z = tanh(1)
    assert s.f[0, 0] == pytest.approx(0.7310585786, abs=1e-10)
    assert s.i[0, 0] == pytest.approx(0.7310585786, abs=1e-10)
    assert s.z[0, 0] == pytest.approx(0.7615941560, abs=1e-10)
    assert s.c[1, 0] == pytest.approx(0.5567699411, abs=1e-10)
    assert s.o[0, 0] == pytest.approx(0.7310585786, abs=1e-10)
    assert s.h[1, 0] == pytest.approx(0.3696063529, abs=1e-10)
    assert s.c[1, 0] == pytest.approx(c, abs=1e-15)
    assert s.h[1, 0] == pytest.approx(h, abs=1e-15)
    assert pred == pytest.approx(h, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_reference(seed):
    p, x, _ = random_instance(4, 7, seed)
    pred, _ = forward(p, x)
    assert pred == pytest.approx(reference_forward(p, x), rel=1e-12, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 8))
def test_gate_ranges(seed, H, T):
    p, x, _ = random_instance(H, T, seed)
    pred, s = forward(p, x)
    for g in (s.f, s.i, s.o):
        assert np.all((g > 0) & (g < 1))
    assert np.all((s.z > -1) & (s.z < 1))
    assert np.all(np.abs(s.h) < 1)
    np.testing.assert_array_equal(s.c[0], 0.0)
    np.testing.assert_array_equal(s.h[0], 0.0)
    assert math.isfinite(pred)


def test_forward_is_pure(small_model):
    p, x, _ = small_model
    a = forward(p, x)
    b = forward(p, x)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1].h, b[1].h)


def test_forward_rejects_bad_window():
    p = LstmParams.zeros(2)
    with pytest.raises(ShapeError):
        forward(p, np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        forward(p, [])


@pytest.mark.parametrize("H,T", [(1, 2), (1, 5), (3, 2), (3, 5)])
@pytest.mark.parametrize("seed", [11, 12])
def test_gradient_check(H, T, seed):
    p, x, target = random_instance(H, T, seed)
    pred, s = forward(p, x)
    g = backward(p, x, target, s)
    assert max_rel_error(g.flatten(), fd_gradient(p, x, target)) < 1e-5


def test_head_bias_gradient_exact(small_model):
    p, x, target = small_model
    pred, s = forward(p, x)
    g = backward(p, x, target, s)
    assert g.head_b == 2 * (pred - target)


def test_zero_error_gives_zero_gradient(small_model):
    p, x, _ = small_model
    pred, s = forward(p, x)
    g = backward(p, x, pred, s)
    assert loss(pred, pred) == 0.0
    np.testing.assert_array_equal(g.flatten(), 0.0)


def test_backward_rejects_stale_state(small_model):
    p, x, target = small_model
    _, s = forward(p, x)
    with pytest.raises(ValueError, match="stale"):
        backward(p, x + 0.1, target, s)
    other = LstmParams(p.flatten() * 0.5, p.H)
    with pytest.raises(ValueError, match="stale"):
        backward(other, x, target, s)
    with pytest.raises(ValueError):
        backward(p, x, target, None)


def test_sgd_step():
    p, _, _ = random_instance(2, 3, 0)
    zero = Gradients(np.zeros(len(p)), p.H)
    assert sgd_step(p, zero, 0.1) == p
    g = Gradients(np.ones(len(p)), p.H)
    assert sgd_step(p, g, 0.0) == p
    vec = np.zeros(len(p))
    vec[-1] = 1.0
    gv = np.zeros(len(p))
    gv[-1] = 2.0
    out = sgd_step(LstmParams(vec, 2), Gradients(gv, 2), 0.1)
    assert out.head_b == pytest.approx(0.8, abs=1e-15)


def test_clip_gradients():
    g = Gradients(np.full(param_count(2), 10.0), 2)
    c = clip_gradients(g, 5.0)
    assert np.linalg.norm(c.flatten()) == pytest.approx(5.0)
    small = Gradients(np.full(param_count(2), 1e-3), 2)
    assert clip_gradients(small, 5.0) == small
    assert clip_gradients(g, None) is g


def test_train_segment_single_window_matches_manual(small_model):
    p, x, target = small_model
    cfg = TrainConfig(hidden=3, window=5, learning_rate=0.05)
    trained, mean_loss = train_segment(p, (x[None, :], np.array([target])), cfg)
    pred, s = forward(p, x)
    g = clip_gradients(backward(p, x, target, s), cfg.clip_norm)
    manual = sgd_step(p, g, cfg.learning_rate)
    assert trained == manual
    assert mean_loss == loss(pred, target)


def test_train_segment_converges_on_constant_window():
    p = init_params(4, 1, RngStream(0, ("init",)))
    x = np.full(6, 0.3)
    X, y = x[None, :], np.array([0.7])
    cfg = TrainConfig(hidden=4, window=6, learning_rate=0.01)
    losses = []
    for _ in range(12):
        p, l = train_segment(p, (X, y), cfg)
        losses.append(l)
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_train_segment_deterministic_and_errors():
    p = init_params(3, 1, RngStream(1, ("init",)))
    rng = np.random.default_rng(0)
    X, y = rng.uniform(size=(20, 4)), rng.uniform(size=20)
    cfg = TrainConfig(hidden=3, window=4)
    a = train_segment(p, (X, y), cfg)
    b = train_segment(p, (X, y), cfg)
    assert a[0] == b[0] and a[1] == b[1]
    with pytest.raises(ValueError):
        train_segment(p, (np.empty((0, 4)), np.empty(0)), cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(hidden=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    assert (TrainConfig().hidden, TrainConfig().window, TrainConfig().epochs) == (50, 48, 4)


def test_forecast():
    p, _, _ = random_instance(3, 4, 2)
    hist = np.random.default_rng(1).uniform(size=10)
    fut = np.random.default_rng(2).uniform(size=5)
    assert forecast(p, hist, 0, 4).shape == (0,)
    one = forecast(p, hist, 1, 4)
    assert one[0] == forward(p, hist[-4:])[0]
    many = forecast(p, hist, 4, 4, future=fut)
    series = np.concatenate([hist, fut])
    for m in range(4):
        assert many[m] == forward(p, series[10 - 4 + m:10 + m])[0]
    np.testing.assert_array_equal(forecast(LstmParams.zeros(3), hist, 3, 4, future=fut), 0.0)
    with pytest.raises(ValueError):
        forecast(p, hist[:3], 1, 4)
    with pytest.raises(ValueError):
        forecast(p, hist, 3, 4)


def test_predict_windows_matches_forward(small_model):
    p, x, _ = small_model
    X = np.stack([x, x[::-1]])
    out = predict_windows(p, X)
    assert out[0] == forward(p, x)[0]
    assert out[1] == forward(p, x[::-1])[0]
