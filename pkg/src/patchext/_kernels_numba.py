"""Numba twin of ``_kernels``: per-point recurrences compiled with @njit.

Kept in lockstep with the numpy reference; ``tests/test_basis.py`` asserts
bitwise-level agreement between the two backends.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _rec_coeffs(alpha, n):
    c1 = 2.0 * n * (n + alpha) * (2.0 * n + alpha - 2.0)
    c2 = (2.0 * n + alpha - 1.0) * alpha * alpha
    c3 = (2.0 * n + alpha - 2.0) * (2.0 * n + alpha - 1.0) * (2.0 * n + alpha)
    c4 = 2.0 * (n + alpha - 1.0) * (n - 1.0) * (2.0 * n + alpha)
    return c1, c2, c3, c4


@njit(cache=True)
def _hj_scalar(alpha, nmax, u, gu, v, gv, vals, grads):
    # vals: (nmax+1,), grads: (nmax+1, d); scratch owned by caller
    d = gu.shape[0]
    vals[0] = 1.0
    for t in range(d):
        grads[0, t] = 0.0
    if nmax >= 1:
        vals[1] = 0.5 * ((alpha + 2.0) * u + alpha * v)
        for t in range(d):
            grads[1, t] = 0.5 * ((alpha + 2.0) * gu[t] + alpha * gv[t])
    for n in range(2, nmax + 1):
        c1, c2, c3, c4 = _rec_coeffs(alpha, n)
        w = c2 * v + c3 * u
        vals[n] = (w * vals[n - 1] - c4 * v * v * vals[n - 2]) / c1
        for t in range(d):
            gw = c2 * gv[t] + c3 * gu[t]
            grads[n, t] = (
                gw * vals[n - 1] + w * grads[n - 1, t]
                - c4 * (2.0 * v * gv[t] * vals[n - 2] + v * v * grads[n - 2, t])
            ) / c1


@njit(cache=True)
def tet_onb_raw(pts, p):
    npts = pts.shape[0]
    N = (p + 1) * (p + 2) * (p + 3) // 6
    vals = np.empty((npts, N))
    grads = np.empty((npts, N, 3))

    guU = np.array([2.0, 1.0, 1.0])
    gvU = np.array([0.0, -1.0, -1.0])
    guV = np.array([0.0, 2.0, 1.0])
    gvV = np.array([0.0, 0.0, -1.0])
    guW = np.array([0.0, 0.0, 2.0])
    gz = np.zeros(3)

    Uv = np.empty(p + 1)
    Ug = np.empty((p + 1, 3))
    Vv = np.empty(p + 1)
    Vg = np.empty((p + 1, 3))
    Wv = np.empty(p + 1)
    Wg = np.empty((p + 1, 3))

    for q in range(npts):
        x = pts[q, 0]
        y = pts[q, 1]
        z = pts[q, 2]
        _hj_scalar(0.0, p, 2.0 * x - 1.0 + y + z, guU, 1.0 - y - z, gvU, Uv, Ug)
        m = 0
        for i in range(p + 1):
            _hj_scalar(2.0 * i + 1.0, p - i, 2.0 * y - 1.0 + z, guV,
                       1.0 - z, gvV, Vv, Vg)
            for j in range(p - i + 1):
                _hj_scalar(2.0 * (i + j) + 2.0, p - i - j, 2.0 * z - 1.0, guW,
                           1.0, gz, Wv, Wg)
                uv = Uv[i] * Vv[j]
                g0 = Ug[i, 0] * Vv[j] + Uv[i] * Vg[j, 0]
                g1 = Ug[i, 1] * Vv[j] + Uv[i] * Vg[j, 1]
                g2 = Ug[i, 2] * Vv[j] + Uv[i] * Vg[j, 2]
                for k in range(p - i - j + 1):
                    vals[q, m] = uv * Wv[k]
                    grads[q, m, 0] = g0 * Wv[k] + uv * Wg[k, 0]
                    grads[q, m, 1] = g1 * Wv[k] + uv * Wg[k, 1]
                    grads[q, m, 2] = g2 * Wv[k] + uv * Wg[k, 2]
                    m += 1
    return vals, grads


@njit(cache=True)
def tri_onb_raw(pts, p):
    npts = pts.shape[0]
    N = (p + 1) * (p + 2) // 2
    vals = np.empty((npts, N))
    grads = np.empty((npts, N, 2))

    guU = np.array([2.0, 1.0])
    gvU = np.array([0.0, -1.0])
    guW = np.array([0.0, 2.0])
    gz = np.zeros(2)

    Uv = np.empty(p + 1)
    Ug = np.empty((p + 1, 2))
    Wv = np.empty(p + 1)
    Wg = np.empty((p + 1, 2))

    for q in range(npts):
        x = pts[q, 0]
        y = pts[q, 1]
        _hj_scalar(0.0, p, 2.0 * x - 1.0 + y, guU, 1.0 - y, gvU, Uv, Ug)
        m = 0
        for i in range(p + 1):
            _hj_scalar(2.0 * i + 1.0, p - i, 2.0 * y - 1.0, guW, 1.0, gz, Wv, Wg)
            for j in range(p - i + 1):
                vals[q, m] = Uv[i] * Wv[j]
                grads[q, m, 0] = Ug[i, 0] * Wv[j] + Uv[i] * Wg[j, 0]
                grads[q, m, 1] = Ug[i, 1] * Wv[j] + Uv[i] * Wg[j, 1]
                m += 1
    return vals, grads


@njit(cache=True)
def tet_homog_raw(pts, p):
    npts = pts.shape[0]
    N = (p + 1) * (p + 2) // 2
    vals = np.empty((npts, N))
    gz = np.zeros(3)
    Av = np.empty(p + 1)
    Ag = np.empty((p + 1, 3))
    Bv = np.empty(p + 1)
    Bg = np.empty((p + 1, 3))
    spow = np.empty(p + 1)
    for q in range(npts):
        x = pts[q, 0]
        y = pts[q, 1]
        z = pts[q, 2]
        s = x + y + z
        spow[0] = 1.0
        for k in range(1, p + 1):
            spow[k] = spow[k - 1] * s
        _hj_scalar(0.0, p, x - z, gz, x + z, gz, Av, Ag)
        m = 0
        for i in range(p + 1):
            _hj_scalar(2.0 * i + 1.0, p - i, 2.0 * y - s, gz, s, gz, Bv, Bg)
            for j in range(p - i + 1):
                vals[q, m] = Av[i] * Bv[j] * spow[p - i - j]
                m += 1
    return vals
