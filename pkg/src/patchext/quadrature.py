"""Quadrature rules on the reference segment, triangle, and tetrahedron.

Conical-product (collapsed-coordinate) rules built from Gauss--Legendre and
Gauss--Jacobi 1D rules; the collapsed Jacobian is absorbed into the Jacobi
weights, so a rule of declared degree d integrates every polynomial of
total degree <= d exactly.  Rules are cached per (shape, degree).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class Quadrature:
    """Points/weights on a reference element with declared exactness."""

    points: np.ndarray   # (n, dim) or (n,) for the segment
    weights: np.ndarray  # (n,)
    degree: int          # exactness (total polynomial degree)


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _gauss_jacobi01(n, alpha):
    # int_0^1 (1-t)^alpha f(t) dt  ==  sum w_i f(t_i)
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def segment_rule(degree):
    n = degree // 2 + 1
    t, w = _gauss01(n)
    return Quadrature(points=t, weights=w, degree=2 * n - 1)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    n = degree // 2 + 1
    xi, wxi = _gauss01(n)
    eta, weta = _gauss_jacobi01(n, 1.0)
    X = np.outer(np.ones(n), xi) * (1.0 - eta)[:, None]
    Y = np.outer(eta, np.ones(n))
    W = np.outer(weta, wxi)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return Quadrature(points=pts, weights=W.ravel(), degree=2 * n - 1)


@lru_cache(maxsize=None)
def tetrahedron_rule(degree):
    n = degree // 2 + 1
    xi, wxi = _gauss01(n)
    eta, weta = _gauss_jacobi01(n, 1.0)
    zeta, wzeta = _gauss_jacobi01(n, 2.0)
    X = xi[None, None, :] * (1.0 - eta)[None, :, None] * (1.0 - zeta)[:, None, None]
    Y = eta[None, :, None] * (1.0 - zeta)[:, None, None] * np.ones(n)[None, None, :]
    Z = zeta[:, None, None] * np.ones((1, n, n))
    W = wzeta[:, None, None] * weta[None, :, None] * wxi[None, None, :]
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    return Quadrature(points=pts, weights=W.ravel(), degree=2 * n - 1)


def build_quadrature(shape, degree):
    """Rule on reference ``shape`` in {"segment","triangle","tetrahedron"}."""
    if shape == "segment":
        return segment_rule(degree)
    if shape == "triangle":
        return triangle_rule(degree)
    if shape == "tetrahedron":
        return tetrahedron_rule(degree)
    raise ValueError(f"unknown shape {shape!r}")
