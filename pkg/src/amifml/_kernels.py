"""Compiled inner loops for the peephole LSTM.

Parameters live in one flat float64 vector laid out as

    W (4, H, D) | R (4, H, H) | P (3, H) | b (4, H) | head_w (H) | head_b (1)

with gate order f, i, z, o for W/R/b and f, i, o for the peepholes.
Every public model operation funnels through these functions so the fused
training loop and the step-by-step API produce bit-identical numbers.
"""

import math

import numba as nb
import numpy as np

GATES = 4
PEEPHOLES = 3


@nb.njit(cache=True)
def param_count(H, D):
    return GATES * H * D + GATES * H * H + PEEPHOLES * H + GATES * H + H + 1


@nb.njit(cache=True)
def offsets(H, D):
    o_w = 0
    o_r = o_w + GATES * H * D
    o_p = o_r + GATES * H * H
    o_b = o_p + PEEPHOLES * H
    o_hw = o_b + GATES * H
    o_hb = o_hw + H
    return o_w, o_r, o_p, o_b, o_hw, o_hb


@nb.njit(cache=True, inline="always")
def sigmoid(a):
    if a >= 0.0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


@nb.njit(cache=True, nogil=True)
def forward(vec, H, x, f, i, z, o, c, h, tc):
    """Run the recurrence over window ``x``; fills the state arrays in place.

    ``f, i, z, o, tc`` have shape (T, H), ``tc`` caching tanh(c^t) for the
    backward pass; ``c, h`` have shape (T + 1, H) with row 0 holding the zero
    initial state. Returns the scalar prediction.
    """
    T = x.shape[0]
    o_w, o_r, o_p, o_b, o_hw, o_hb = offsets(H, 1)
    W = vec[o_w:o_r].reshape((GATES, H))
    R = vec[o_r:o_p].reshape((GATES, H, H))
    P = vec[o_p:o_b].reshape((PEEPHOLES, H))
    b = vec[o_b:o_hw].reshape((GATES, H))
    G = GATES * H
    # transposed recurrent block so the inner loop runs over contiguous rows
    RT = np.empty((H, G))
    for r in range(G):
        for k in range(H):
            RT[k, r] = R[r // H, r % H, k]
    a = np.empty(G)
    for j in range(H):
        c[0, j] = 0.0
        h[0, j] = 0.0
    for t in range(T):
        xt = x[t]
        hp = h[t]
        cp = c[t]
        for g in range(GATES):
            for j in range(H):
                a[g * H + j] = W[g, j] * xt + b[g, j]
        for k in range(H):
            hk = hp[k]
            RTk = RT[k]
            for r in range(G):
                a[r] += RTk[r] * hk
        for j in range(H):
            fj = sigmoid(a[j] + P[0, j] * cp[j])
            ij = sigmoid(a[H + j] + P[1, j] * cp[j])
            zj = math.tanh(a[2 * H + j])
            cj = zj * ij + cp[j] * fj
            oj = sigmoid(a[3 * H + j] + P[2, j] * cj)
            f[t, j] = fj
            i[t, j] = ij
            z[t, j] = zj
            o[t, j] = oj
            tcj = math.tanh(cj)
            c[t + 1, j] = cj
            tc[t, j] = tcj
            h[t + 1, j] = tcj * oj
    pred = vec[o_hb]
    for j in range(H):
        pred += vec[o_hw + j] * h[T, j]
    return pred


@nb.njit(cache=True, nogil=True)
def backward(vec, H, x, target, pred, f, i, z, o, c, h, tc, grad):
    """Reverse-mode derivatives of (pred - target)**2; overwrites ``grad``."""
    T = x.shape[0]
    o_w, o_r, o_p, o_b, o_hw, o_hb = offsets(H, 1)
    R = vec[o_r:o_p].reshape((GATES, H, H))
    P = vec[o_p:o_b].reshape((PEEPHOLES, H))
    hw = vec[o_hw:o_hb]
    grad[:] = 0.0
    gW = grad[o_w:o_r].reshape((GATES, H))
    gR = grad[o_r:o_p].reshape((GATES, H, H))
    gP = grad[o_p:o_b].reshape((PEEPHOLES, H))
    gb = grad[o_b:o_hw].reshape((GATES, H))
    ghw = grad[o_hw:o_hb]

    err = pred - target
    dpred = 2.0 * err
    grad[o_hb] = dpred
    dh = np.empty(H)
    dc = np.empty(H)
    da = np.empty((GATES, H))
    for j in range(H):
        ghw[j] = dpred * h[T, j]
        dh[j] = dpred * hw[j]
        dc[j] = 0.0

    for t in range(T - 1, -1, -1):
        xt = x[t]
        cp = c[t]
        ct = c[t + 1]
        hp = h[t]
        for j in range(H):
            tcj = tc[t, j]
            oj = o[t, j]
            dao = dh[j] * tcj * oj * (1.0 - oj)
            dcj = dc[j] + dh[j] * oj * (1.0 - tcj * tcj) + dao * P[2, j]
            fj = f[t, j]
            ij = i[t, j]
            zj = z[t, j]
            daf = dcj * cp[j] * fj * (1.0 - fj)
            dai = dcj * zj * ij * (1.0 - ij)
            daz = dcj * ij * (1.0 - zj * zj)
            da[0, j] = daf
            da[1, j] = dai
            da[2, j] = daz
            da[3, j] = dao
            gP[0, j] += daf * cp[j]
            gP[1, j] += dai * cp[j]
            gP[2, j] += dao * ct[j]
            # carry to c^(t-1): direct path through f plus both peepholes
            dc[j] = dcj * fj + daf * P[0, j] + dai * P[1, j]
        for k in range(H):
            dh[k] = 0.0
        for g in range(GATES):
            for j in range(H):
                d = da[g, j]
                gW[g, j] += d * xt
                gb[g, j] += d
                gRj = gR[g, j]
                Rj = R[g, j]
                for k in range(H):
                    gRj[k] += d * hp[k]
                    dh[k] += Rj[k] * d
    return err * err


@nb.njit(cache=True, nogil=True)
def clip(grad, max_norm):
    """Scale ``grad`` in place to global L2 norm ``max_norm`` if it exceeds it."""
    if max_norm <= 0.0:
        return 1.0
    s = 0.0
    for j in range(grad.shape[0]):
        s += grad[j] * grad[j]
    norm = math.sqrt(s)
    if norm > max_norm:
        scale = max_norm / norm
        for j in range(grad.shape[0]):
            grad[j] *= scale
        return scale
    return 1.0


@nb.njit(cache=True, nogil=True)
def sgd(vec, grad, lr, out):
    for j in range(vec.shape[0]):
        out[j] = vec[j] - lr * grad[j]


@nb.njit(cache=True, nogil=True)
def train(vec, H, X, y, lr, max_norm):
    """One sequential SGD pass; returns (new params, mean pre-step loss)."""
    n, T = X.shape
    cur = vec.copy()
    nxt = np.empty_like(vec)
    grad = np.empty_like(vec)
    f = np.empty((T, H))
    i = np.empty((T, H))
    z = np.empty((T, H))
    o = np.empty((T, H))
    c = np.empty((T + 1, H))
    h = np.empty((T + 1, H))
    tc = np.empty((T, H))
    total = 0.0
    for w in range(n):
        x = X[w]
        pred = forward(cur, H, x, f, i, z, o, c, h, tc)
        loss = backward(cur, H, x, y[w], pred, f, i, z, o, c, h, tc, grad)
        total += loss
        clip(grad, max_norm)
        sgd(cur, grad, lr, nxt)
        cur, nxt = nxt, cur
    return cur, total / n


@nb.njit(cache=True, nogil=True)
def predict(vec, H, X):
    n, T = X.shape
    f = np.empty((T, H))
    i = np.empty((T, H))
    z = np.empty((T, H))
    o = np.empty((T, H))
    c = np.empty((T + 1, H))
    h = np.empty((T + 1, H))
    tc = np.empty((T, H))
    out = np.empty(n)
    for w in range(n):
        out[w] = forward(vec, H, X[w], f, i, z, o, c, h, tc)
    return out
