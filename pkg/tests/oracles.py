"""Independent reference implementations used to check the production code."""
from __future__ import annotations

import math

import numpy as np


def naive_envelope(signal, w):
    """O(n*w) windowed max/min with indices ``n - ceil(w/2) .. n + floor(w/2)``."""
    x = list(map(float, signal))
    n = len(x)
    before = -(-w // 2)
    after = w // 2
    upper, lower = [], []
    for i in range(n):
        lo = max(0, i - before)
        hi = min(n - 1, i + after)
        window = x[lo:hi + 1]
        upper.append(max(window))
        lower.append(min(window))
    return np.array(upper), np.array(lower)


def two_stage_interp(omega_grid, o_grid, torque, omega, o):
    """Interpolate along opening for the two bracketing speed rows, then along speed."""
    wg = list(map(float, omega_grid))
    og = list(map(float, o_grid))
    omega = min(max(float(omega), wg[0]), wg[-1])
    o = min(max(float(o), og[0]), og[-1])

    def bracket(grid, v):
        for k in range(len(grid) - 1):
            if grid[k] <= v <= grid[k + 1]:
                return k
        return len(grid) - 2

    i = bracket(wg, omega)
    j = bracket(og, o)

    def along_o(row):
        a, b = torque[row][j], torque[row][j + 1]
        return a + (b - a) * (o - og[j]) / (og[j + 1] - og[j])

    lo_row, hi_row = along_o(i), along_o(i + 1)
    return lo_row + (hi_row - lo_row) * (omega - wg[i]) / (wg[i + 1] - wg[i])


def central_diff(f, x, h=1e-4):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (copied)."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def gaussian_nll_beta(mu, sigma, y, beta):
    """Loss value straight from the definition, no shared code."""
    total = 0.0
    n = len(mu)
    for i in range(n):
        for k in range(len(mu[i])):
            s = sigma[i][k]
            w = s ** (2 * beta)
            total += w * ((y[i][k] - mu[i][k]) ** 2 / (2 * s * s) + 0.5 * math.log(s * s))
    return total / n


def time_cost_table(t, T):
    if t < 0.5 * T:
        return 0.0
    if t < T:
        return 0.05 * (t - 0.5 * T) / (0.5 * T)
    return 1.0 + (t - T) / (0.2 * T)


def scalar_rk4(a, y0, t_end, h):
    """Plain RK4 on dy/dt = a (1 - y)."""
    f = lambda y: a * (1.0 - y)  # noqa: E731
    y = y0
    for _ in range(int(round(t_end / h))):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return y


def naive_envelope_vec(signal, w):
    """Same brute-force window scan as :func:`naive_envelope`, vectorized with strided views."""
    from numpy.lib.stride_tricks import sliding_window_view

    x = np.asarray(signal, dtype=float)
    before, after = -(-w // 2), w // 2
    span = before + after + 1
    hi = np.concatenate([np.full(before, -np.inf), x, np.full(after, -np.inf)])
    lo = np.concatenate([np.full(before, np.inf), x, np.full(after, np.inf)])
    return sliding_window_view(hi, span).max(axis=1), sliding_window_view(lo, span).min(axis=1)
