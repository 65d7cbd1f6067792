"""Pure-numpy reference kernels.

Every function here has a twin of the same signature in ``_numba``; the two
must agree to rounding error. Activation codes: 0 identity, 1 relu, 2 tanh.
"""

import numpy as np


def dense_forward(x, w, b, act):
    z = x @ w.T
    z += b
    if act == 1:
        y = np.maximum(z, 0.0)
    elif act == 2:
        y = np.tanh(z)
    else:
        y = z
    return z, y


def dense_backward(x, w, z, y, act, gy, gw, gb):
    """Write dL/dW into ``gw`` and dL/db into ``gb``; return dL/dx."""
    if act == 1:
        gz = gy * (z > 0.0)
    elif act == 2:
        gz = gy * (1.0 - y * y)
    else:
        gz = gy
    np.matmul(gz.T, x, out=gw)
    np.sum(gz, axis=0, out=gb)
    return gz @ w


def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def polyak(target, main, coeff):
    target *= coeff
    target += (1.0 - coeff) * main


def logsumexp(v):
    hi = np.max(v)
    return hi + np.log(np.sum(np.exp(v - hi)))


def pair_dv(tj0, tj1, tm0, tm1):
    """Two-sample DV bound per row plus softmax weights of the marginal scores."""
    hi = np.maximum(tm0, tm1)
    e0 = np.exp(tm0 - hi)
    e1 = np.exp(tm1 - hi)
    s = e0 + e1
    raw = 0.5 * (tj0 + tj1) - (hi + np.log(0.5 * s))
    return raw, e0 / s, e1 / s


def push_step(state, action, n_objects, max_step, r_contact, lo, hi):
    out = state.copy()
    a = np.clip(action, -max_step, max_step)
    agent = np.clip(out[:2] + a, lo, hi)
    out[:2] = agent
    for k in range(n_objects):
        j = 2 + 2 * k
        d = out[j:j + 2] - agent
        dist = np.sqrt(d[0] * d[0] + d[1] * d[1])
        if dist >= r_contact:
            continue
        if dist > 0.0:
            u = d / dist
        else:
            na = np.sqrt(a[0] * a[0] + a[1] * a[1])
            u = a / na if na > 0.0 else np.array([1.0, 0.0])
        out[j:j + 2] = np.clip(out[j:j + 2] + u * (r_contact - dist), lo, hi)
    return out
