"""Numba twins of the kernels in ``_numpy`` (same signatures, same results)."""

import math

import numpy as np

from .._jit import njit


@njit(cache=True)
def dense_forward(x, w, b, act):
    z = x @ w.T
    n, k = z.shape
    y = np.empty_like(z)
    for i in range(n):
        for j in range(k):
            v = z[i, j] + b[j]
            z[i, j] = v
            if act == 1:
                y[i, j] = v if v > 0.0 else 0.0
            elif act == 2:
                y[i, j] = math.tanh(v)
            else:
                y[i, j] = v
    return z, y


@njit(cache=True)
def dense_backward(x, w, z, y, act, gy, gw, gb):
    n, k = gy.shape
    gz = np.empty_like(gy)
    for i in range(n):
        for j in range(k):
            if act == 1:
                gz[i, j] = gy[i, j] if z[i, j] > 0.0 else 0.0
            elif act == 2:
                gz[i, j] = gy[i, j] * (1.0 - y[i, j] * y[i, j])
            else:
                gz[i, j] = gy[i, j]
    gw[:, :] = gz.T @ x
    for j in range(k):
        acc = 0.0
        for i in range(n):
            acc += gz[i, j]
        gb[j] = acc
    return gz @ w


@njit(cache=True)
def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for i in range(p.shape[0]):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        p[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)


@njit(cache=True)
def polyak(target, main, coeff):
    for i in range(target.shape[0]):
        target[i] = coeff * target[i] + (1.0 - coeff) * main[i]


@njit(cache=True)
def logsumexp(v):
    hi = v[0]
    for i in range(1, v.shape[0]):
        if v[i] > hi:
            hi = v[i]
    acc = 0.0
    for i in range(v.shape[0]):
        acc += math.exp(v[i] - hi)
    return hi + math.log(acc)


@njit(cache=True)
def pair_dv(tj0, tj1, tm0, tm1):
    n = tj0.shape[0]
    raw = np.empty(n)
    w0 = np.empty(n)
    w1 = np.empty(n)
    for i in range(n):
        hi = max(tm0[i], tm1[i])
        e0 = math.exp(tm0[i] - hi)
        e1 = math.exp(tm1[i] - hi)
        s = e0 + e1
        raw[i] = 0.5 * (tj0[i] + tj1[i]) - (hi + math.log(0.5 * s))
        w0[i] = e0 / s
        w1[i] = e1 / s
    return raw, w0, w1


@njit(cache=True)
def push_step(state, action, n_objects, max_step, r_contact, lo, hi):
    out = state.copy()
    ax = min(max(action[0], -max_step), max_step)
    ay = min(max(action[1], -max_step), max_step)
    px = min(max(out[0] + ax, lo), hi)
    py = min(max(out[1] + ay, lo), hi)
    out[0] = px
    out[1] = py
    for k in range(n_objects):
        j = 2 + 2 * k
        dx = out[j] - px
        dy = out[j + 1] - py
        dist = math.sqrt(dx * dx + dy * dy)
        if dist >= r_contact:
            continue
        if dist > 0.0:
            ux = dx / dist
            uy = dy / dist
        else:
            na = math.sqrt(ax * ax + ay * ay)
            if na > 0.0:
                ux = ax / na
                uy = ay / na
            else:
                ux = 1.0
                uy = 0.0
        depth = r_contact - dist
        out[j] = min(max(out[j] + ux * depth, lo), hi)
        out[j + 1] = min(max(out[j + 1] + uy * depth, lo), hi)
    return out
