"""JIT inner loops for full-batch gradient descent in data coordinates.

Both kernels take the network in coordinates of the orthonormal inputs:
``P[j, i] = v_j . x_i``. The gradient of the loss with respect to a hidden
vector always lies in the span of the inputs, so the component orthogonal to
it never moves (apart from the rescaling applied by renormalization, which the
caller tracks through ``kappa``).

Status codes: 0 ok, 1 non-finite value, 2 collapsed mantissa.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_TINY = math.log(np.finfo(float).tiny)
TINY = np.finfo(float).tiny


@njit(cache=True, nogil=True)
def _scaled_outputs(P, b, c, s, h):
    m, n = P.shape
    for i in range(n):
        h[i] = 0.0
    for j in range(m):
        log_amp = 2.0 * c[j] + math.log(b[j])
        if log_amp < LOG_TINY - 5.0:  # every term would be below TINY
            continue
        amp = math.exp(log_amp)
        for i in range(n):
            z = P[j, i]
            if z > 0.0:
                term = amp * z
                if term >= TINY:
                    h[i] += s[j] * term


@njit(cache=True, nogil=True)
def run_scaled(P, b, c, s, kappa, perp2, y, lr, e0, e_stop, thr, fit_epoch,
               loss_stop, lo, hi, loss0, h, stats):
    """Advance the log-domain state from epoch ``e0`` until something must be recorded.

    Returns ``(epoch, loss, status, fit_event)``. The state on return is the
    one at ``epoch`` and ``h`` holds its outputs. ``stats[0]`` accumulates the
    largest per-step loss increase relative to ``loss0``; ``stats[1]`` counts
    renormalizations; ``stats[2]`` carries the previous loss between calls
    (negative before the first step).
    """
    m, n = P.shape
    G = np.empty(n)
    e = e0
    prev = stats[2]
    while True:
        _scaled_outputs(P, b, c, s, h)
        acc = 0.0
        for i in range(n):
            r = h[i] - y[i]
            acc += r * r
        cur = acc / (2.0 * n)
        if not math.isfinite(cur):
            return e, cur, 1, False
        if prev >= 0.0 and loss0 > 0.0:
            inc = (cur - prev) / loss0
            if inc > stats[0]:
                stats[0] = inc
        prev = cur
        stats[2] = cur
        if e > e0:
            event = False
            for i in range(n):
                if fit_epoch[i] < 0 and y[i] != 0.0 and h[i] / y[i] >= thr:
                    fit_epoch[i] = e
                    event = True
            if event or cur < loss_stop or e >= e_stop:
                return e, cur, 0, event
        for j in range(m):
            # dynamical vector fD_j = -(1/n) sum_{active i} r_i x_i, in data coordinates
            dot = 0.0
            for i in range(n):
                if P[j, i] > 0.0:
                    G[i] = -(h[i] - y[i]) / n
                    dot += G[i] * P[j, i]
                else:
                    G[i] = 0.0
            step_v = lr * s[j] * b[j]
            for i in range(n):
                P[j, i] += step_v * G[i]
            b[j] += lr * s[j] * dot
            nv2 = perp2[j] * kappa[j] * kappa[j]
            for i in range(n):
                nv2 += P[j, i] * P[j, i]
            nv = math.sqrt(nv2)
            if not (math.isfinite(nv) and math.isfinite(b[j])):
                return e, cur, 1, False
            if nv == 0.0 or b[j] <= 0.0:
                return e, cur, 2, False
            if nv < lo or nv > hi or b[j] < lo or b[j] > hi:
                r = math.sqrt(nv * b[j])
                c[j] += math.log(r)
                for i in range(n):
                    P[j, i] /= r
                b[j] /= r
                kappa[j] /= r
                stats[1] += 1.0
        e += 1


@njit(cache=True, nogil=True)
def run_dense(P, a, y, lr, e0, e_stop, loss_stop, loss0, h, stats):
    """Plain gradient descent on ``(a, W)`` with ``P = W X^T``. Returns ``(epoch, loss, status)``."""
    m, n = P.shape
    G = np.empty(n)
    e = e0
    prev = stats[2]
    while True:
        for i in range(n):
            h[i] = 0.0
        for j in range(m):
            for i in range(n):
                if P[j, i] > 0.0:
                    h[i] += a[j] * P[j, i]
        acc = 0.0
        for i in range(n):
            r = h[i] - y[i]
            acc += r * r
        cur = acc / (2.0 * n)
        if not math.isfinite(cur):
            return e, cur, 1
        if prev >= 0.0 and loss0 > 0.0:
            inc = (cur - prev) / loss0
            if inc > stats[0]:
                stats[0] = inc
        prev = cur
        stats[2] = cur
        if e > e0 and (cur < loss_stop or e >= e_stop):
            return e, cur, 0
        for j in range(m):
            dot = 0.0
            for i in range(n):
                if P[j, i] > 0.0:
                    G[i] = -(h[i] - y[i]) / n
                    dot += G[i] * P[j, i]
                else:
                    G[i] = 0.0
            aj = a[j]
            for i in range(n):
                P[j, i] += lr * aj * G[i]
            a[j] += lr * dot
        e += 1
