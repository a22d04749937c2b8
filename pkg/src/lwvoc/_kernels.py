"""Compiled RK4 loop for the closed-loop models.

Mirrors :func:`lwvoc.controller.controller_rhs` plus the linear network part
``d[v; i]/dt = A [v; i] + in_scale * u``; the numpy path stays the reference
and the two are cross-checked in the test suite.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _wrap(x):
    return math.pi - ((math.pi - x) % TWO_PI)


@njit(cache=True)
def _rhs(t, x, out, n, alphabeta, decoupled, r_star, theta0, gamma, alpha, omega, e, A, in_scale):
    c = 1.0
    s = 0.0
    shift = 0.0
    w_off = 0.0
    if alphabeta:
        c = math.cos(omega * t)
        s = math.sin(omega * t)
        shift = omega * t
        w_off = omega
    two_n = 2 * n
    for k in range(n):
        u0 = x[2 * k]
        u1 = x[2 * k + 1]
        v0 = 0.0
        v1 = 0.0
        if not decoupled:
            v0 = x[two_n + 2 * k]
            v1 = x[two_n + 2 * k + 1]
        r = math.sqrt(u0 * u0 + u1 * u1)
        delta = 0.0
        if r > 0.0:
            delta = _wrap(math.atan2(u1, u0) - (theta0[k] + shift))
        lam = gamma[k] * (r / r_star[k] - 1.0)
        w = alpha[k] * delta - w_off
        e0 = c * e[k, 0] - s * e[k, 1]
        e1 = s * e[k, 0] + c * e[k, 1]
        dot = v0 * e0 + v1 * e1
        out[2 * k] = -lam * u0 + w * u1 - (v0 - dot * e0)
        out[2 * k + 1] = -lam * u1 - w * u0 - (v1 - dot * e1)
    lin = x.shape[0] - two_n
    if decoupled:
        for a in range(lin):
            out[two_n + a] = 0.0
        return
    for a in range(lin):
        acc = 0.0
        for b in range(lin):
            acc += A[a, b] * x[two_n + b]
        if a < two_n:
            acc += in_scale[a] * x[a]
        out[two_n + a] = acc


@njit(cache=True)
def rk4_run(x0, t0, dt, stride, seg_steps, seg_A, n, alphabeta, decoupled,
            r_star, theta0, gamma, alpha, omega, e, in_scale, out):
    """Integrate one state; returns ``(steps_done, diverged)``.

    ``out`` receives every ``stride``-th state starting with ``x0``.
    """
    dim = x0.shape[0]
    x = x0.copy()
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    out[0, :] = x
    j = 0
    done = 0
    h = dt
    for seg in range(seg_steps.shape[0]):
        A = seg_A[seg]
        for _ in range(seg_steps[seg]):
            t = t0 + done * h
            _rhs(t, x, k1, n, alphabeta, decoupled, r_star, theta0, gamma, alpha, omega, e, A, in_scale)
            for q in range(dim):
                tmp[q] = x[q] + 0.5 * h * k1[q]
            _rhs(t + 0.5 * h, tmp, k2, n, alphabeta, decoupled, r_star, theta0, gamma, alpha, omega, e, A, in_scale)
            for q in range(dim):
                tmp[q] = x[q] + 0.5 * h * k2[q]
            _rhs(t + 0.5 * h, tmp, k3, n, alphabeta, decoupled, r_star, theta0, gamma, alpha, omega, e, A, in_scale)
            for q in range(dim):
                tmp[q] = x[q] + h * k3[q]
            _rhs(t + h, tmp, k4, n, alphabeta, decoupled, r_star, theta0, gamma, alpha, omega, e, A, in_scale)
            finite = True
            for q in range(dim):
                tmp[q] = x[q] + (h / 6.0) * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
                if not math.isfinite(tmp[q]):
                    finite = False
            if not finite:
                return done, True
            for q in range(dim):
                x[q] = tmp[q]
            done += 1
            if done % stride == 0:
                j += 1
                out[j, :] = x
    return done, False
