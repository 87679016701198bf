"""Fused elementwise kernels for the attention model (numba).

numpy evaluates these chains one temporary at a time, which dominated the
training step on small token tensors. All kernels take C-contiguous float64
arrays and loop in a fixed order, so results are deterministic.
"""

import math

import numpy as np
from numba import njit

LN_EPS = 1e-5
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


@njit(cache=True)
def ln_forward(x, g, b):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        r = 1.0 / math.sqrt(var / d + LN_EPS)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * g[j] + b[j]
    return y, xhat, rstd


@njit(cache=True)
def ln_backward(dy, g, xhat, rstd):
    n, d = dy.shape
    dx = np.empty_like(dy)
    dg = np.zeros(d)
    db = np.zeros(d)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dh = dy[i, j] * g[j]
            m1 += dh
            m2 += dh * xhat[i, j]
            dg[j] += dy[i, j] * xhat[i, j]
            db[j] += dy[i, j]
        m1 /= d
        m2 /= d
        r = rstd[i]
        for j in range(d):
            dx[i, j] = r * (dy[i, j] * g[j] - m1 - xhat[i, j] * m2)
    return dx, dg, db


@njit(cache=True)
def gelu_forward(u):
    out = np.empty_like(u)
    th = np.empty_like(u)
    fu, fo, ft = u.ravel(), out.ravel(), th.ravel()
    for i in range(fu.size):
        x = fu[i]
        t = math.tanh(GELU_C * x * (1.0 + GELU_A * x * x))
        ft[i] = t
        fo[i] = 0.5 * x * (1.0 + t)
    return out, th


@njit(cache=True)
def gelu_backward(dout, u, th):
    du = np.empty_like(u)
    fd, fu, ft, fo = dout.ravel(), u.ravel(), th.ravel(), du.ravel()
    for i in range(fu.size):
        x = fu[i]
        t = ft[i]
        fo[i] = fd[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x))
    return du


@njit(cache=True)
def masked_softmax(scores, scale, bias, allowed):
    """Row softmax of ``scores * scale + bias`` over the last axis, with
    disallowed entries forced to exactly zero. ``scores`` is (m, t, t)."""
    m, t, _ = scores.shape
    a = np.empty_like(scores)
    for b in range(m):
        for i in range(t):
            mx = -np.inf
            for j in range(t):
                v = scores[b, i, j] * scale + bias[i, j]
                a[b, i, j] = v
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(t):
                e = math.exp(a[b, i, j] - mx)
                a[b, i, j] = e
                s += e
            for j in range(t):
                a[b, i, j] = a[b, i, j] / s if allowed[i, j] else 0.0
    return a


@njit(cache=True)
def softmax_backward(a, da, scale):
    m, t, _ = a.shape
    ds = np.empty_like(a)
    for b in range(m):
        for i in range(t):
            dot = 0.0
            for j in range(t):
                dot += da[b, i, j] * a[b, i, j]
            for j in range(t):
                ds[b, i, j] = a[b, i, j] * (da[b, i, j] - dot) * scale
    return ds
