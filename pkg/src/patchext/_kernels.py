"""Reference numpy kernels for orthogonal modal bases on simplices.

All bases are built from homogenized Jacobi three-term recurrences,

    g_0 = 1,   g_1 = ((alpha + 2) u + alpha v) / 2,
    g_n = ((c2 v + c3 u) g_{n-1} - c4 v^2 g_{n-2}) / c1,

where u, v are affine in the evaluation point.  With v = 1 this is the
plain Jacobi polynomial P_n^{(alpha,0)}(u); with the collapsed-coordinate
substitutions below it reproduces the classical orthogonal (Dubiner-type)
bases on the reference triangle/tetrahedron while staying polynomial, so
values and gradients can be evaluated anywhere without the singular
collapsed chain rule.

Reference elements: tetrahedron with vertices (0,0,0),(1,0,0),(0,1,0),
(0,0,1); triangle with vertices (0,0),(1,0),(0,1).

The numba twin of this module is ``_kernels_numba``; both must stay
behaviourally identical (tests compare them).
"""

import numpy as np


def jacobi_rec_coeffs(alpha, n):
    """Coefficients (c1, c2, c3, c4) of the degree-n Jacobi(alpha,0) step."""
    c1 = 2.0 * n * (n + alpha) * (2 * n + alpha - 2)
    c2 = (2 * n + alpha - 1) * alpha * alpha
    c3 = (2 * n + alpha - 2) * (2 * n + alpha - 1) * (2 * n + alpha)
    c4 = 2.0 * (n + alpha - 1) * (n - 1) * (2 * n + alpha)
    return c1, c2, c3, c4


def tet_mode_count(p):
    return (p + 1) * (p + 2) * (p + 3) // 6


def tri_mode_count(p):
    return (p + 1) * (p + 2) // 2


def homog_mode_count(p):
    return (p + 1) * (p + 2) // 2


def _homogenized_jacobi(alpha, nmax, u, gu, v, gv):
    """All g_0..g_nmax with gradients.

    u, v are point arrays (npts,), gu, gv constant gradient rows (d,).
    Returns (vals (nmax+1, npts), grads (nmax+1, npts, d)).
    """
    npts = u.shape[0]
    d = gu.shape[0]
    vals = np.empty((nmax + 1, npts))
    grads = np.zeros((nmax + 1, npts, d))
    vals[0] = 1.0
    if nmax >= 1:
        vals[1] = 0.5 * ((alpha + 2.0) * u + alpha * v)
        grads[1] = 0.5 * ((alpha + 2.0) * gu + alpha * gv)
    for n in range(2, nmax + 1):
        c1, c2, c3, c4 = jacobi_rec_coeffs(alpha, n)
        w = c2 * v + c3 * u
        vals[n] = (w * vals[n - 1] - c4 * v * v * vals[n - 2]) / c1
        gw = c2 * gv + c3 * gu
        grads[n] = (
            gw[None, :] * vals[n - 1][:, None]
            + w[:, None] * grads[n - 1]
            - c4 * (2.0 * v[:, None] * gv[None, :] * vals[n - 2][:, None]
                    + (v * v)[:, None] * grads[n - 2])
        ) / c1
    return vals, grads


def tet_onb_raw(pts, p):
    """Unnormalized orthogonal basis on the reference tetrahedron.

    Returns (vals (npts, N), grads (npts, N, 3)); mode order is the
    (i, j, k) loop nest with i outermost.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    npts = pts.shape[0]
    N = tet_mode_count(p)
    vals = np.empty((npts, N))
    grads = np.empty((npts, N, 3))

    uU = 2.0 * x - 1.0 + y + z
    vU = 1.0 - y - z
    Uv, Ug = _homogenized_jacobi(0.0, p, uU, np.array([2.0, 1.0, 1.0]),
                                 vU, np.array([0.0, -1.0, -1.0]))
    uV = 2.0 * y - 1.0 + z
    vV = 1.0 - z
    guV = np.array([0.0, 2.0, 1.0])
    gvV = np.array([0.0, 0.0, -1.0])
    uW = 2.0 * z - 1.0
    guW = np.array([0.0, 0.0, 2.0])
    ones = np.ones_like(x)
    gzero = np.zeros(3)

    m = 0
    for i in range(p + 1):
        Vv, Vg = _homogenized_jacobi(2.0 * i + 1.0, p - i, uV, guV, vV, gvV)
        for j in range(p - i + 1):
            Wv, Wg = _homogenized_jacobi(2.0 * (i + j) + 2.0, p - i - j,
                                         uW, guW, ones, gzero)
            UVv = Uv[i] * Vv[j]
            UVg = Ug[i] * Vv[j][:, None] + Uv[i][:, None] * Vg[j]
            for k in range(p - i - j + 1):
                vals[:, m] = UVv * Wv[k]
                grads[:, m, :] = UVg * Wv[k][:, None] + UVv[:, None] * Wg[k]
                m += 1
    return vals, grads


def tri_onb_raw(pts, p):
    """Unnormalized orthogonal basis on the reference triangle."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    npts = pts.shape[0]
    N = tri_mode_count(p)
    vals = np.empty((npts, N))
    grads = np.empty((npts, N, 2))

    uU = 2.0 * x - 1.0 + y
    vU = 1.0 - y
    Uv, Ug = _homogenized_jacobi(0.0, p, uU, np.array([2.0, 1.0]),
                                 vU, np.array([0.0, -1.0]))
    uW = 2.0 * y - 1.0
    guW = np.array([0.0, 2.0])
    ones = np.ones_like(x)
    gzero = np.zeros(2)

    m = 0
    for i in range(p + 1):
        Wv, Wg = _homogenized_jacobi(2.0 * i + 1.0, p - i, uW, guW, ones, gzero)
        for j in range(p - i + 1):
            vals[:, m] = Uv[i] * Wv[j]
            grads[:, m, :] = Ug[i] * Wv[j][:, None] + Uv[i][:, None] * Wg[j]
            m += 1
    return vals, grads


def tet_homog_raw(pts, p):
    """Basis of homogeneous degree-p polynomials in three variables.

    Values only (npts, (p+1)(p+2)/2); the basis is the homogenization of a
    triangle orthogonal basis and stays well conditioned on the reference
    tetrahedron.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    npts = pts.shape[0]
    N = homog_mode_count(p)
    vals = np.empty((npts, N))

    s = x + y + z
    uA = x - z
    vA = x + z
    g2 = np.zeros(3)
    Av, _ = _homogenized_jacobi(0.0, p, uA, g2, vA, g2)
    uB = 2.0 * y - s
    # powers of s by cumulative products (bitwise-identical to the numba twin)
    spow = np.empty((p + 1, npts))
    spow[0] = 1.0
    for k in range(1, p + 1):
        spow[k] = spow[k - 1] * s
    m = 0
    for i in range(p + 1):
        Bv, _ = _homogenized_jacobi(2.0 * i + 1.0, p - i, uB, g2, s, g2)
        for j in range(p - i + 1):
            vals[:, m] = Av[i] * Bv[j] * spow[p - i - j]
            m += 1
    return vals
