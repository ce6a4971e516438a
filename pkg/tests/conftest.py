import numpy as np
import pytest

from amifml.model import LstmParams, forward, init_params, loss
from amifml.numerics import RngStream


def reference_forward(p: LstmParams, x):
    """Plain numpy evaluation of the peephole recurrences, gate by gate."""
    H = p.H
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))
    h = np.zeros(H)
    c = np.zeros(H)
    for xt in x:
        f = sig(p.W_f[:, 0] * xt + p.R_f @ h + p.P_f * c + p.b_f)
        i = sig(p.W_i[:, 0] * xt + p.R_i @ h + p.P_i * c + p.b_i)
        z = np.tanh(p.W_z[:, 0] * xt + p.R_z @ h + p.b_z)
        c = z * i + c * f
        o = sig(p.W_o[:, 0] * xt + p.R_o @ h + p.P_o * c + p.b_o)
        h = np.tanh(c) * o
    return float(p.head_w @ h + p.head_b)


def random_instance(H, T, seed):
    """Parameters with every path active (nonzero peepholes and biases)."""
    rng = np.random.default_rng(seed)
    base = init_params(H, 1, RngStream(seed, ("fd",))).flatten()
    base += rng.uniform(-0.5, 0.5, base.shape[0])
    x = rng.uniform(0.0, 1.0, T)
    target = float(rng.uniform(0.0, 1.0))
    return LstmParams(base, H), x, target


def fd_gradient(p, x, target, eps=1e-5):
    vec = p.flatten()
    g = np.empty_like(vec)
    for j in range(vec.shape[0]):
        plus, minus = vec.copy(), vec.copy()
        plus[j] += eps
        minus[j] -= eps
        lp = loss(forward(LstmParams(plus, p.H), x)[0], target)
        lm = loss(forward(LstmParams(minus, p.H), x)[0], target)
        g[j] = (lp - lm) / (2 * eps)
    return g


def max_rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def small_model():
    return random_instance(3, 5, 0)


def pytest_terminal_summary(terminalreporter):
    lines = [v for r in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", [])
             for k, v in getattr(r, "user_properties", []) if k == "acceptance" and r.when == "call"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
