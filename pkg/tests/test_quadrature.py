"""Quadrature exactness against closed-form monomial integrals."""

from math import factorial

import numpy as np
import pytest

from patchext.quadrature import (build_quadrature, segment_rule,
                                 tetrahedron_rule, triangle_rule)


def tet_monomial(a, b, c):
    # int_T x^a y^b z^c over the unit tetrahedron
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


def tri_monomial(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 5, 9, 14, 26])
def test_tet_rule_exactness(degree):
    q = tetrahedron_rule(degree)
    assert q.degree >= degree
    assert np.all(q.weights > 0)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                val = np.sum(q.weights * q.points[:, 0] ** a
                             * q.points[:, 1] ** b * q.points[:, 2] ** c)
                exact = tet_monomial(a, b, c)
                assert abs(val - exact) <= 1e-14 * max(1.0, abs(exact) * 50)


@pytest.mark.parametrize("degree", [1, 4, 11, 20])
def test_tri_rule_exactness(degree):
    q = triangle_rule(degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            val = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert abs(val - tri_monomial(a, b)) <= 5e-15


@pytest.mark.parametrize("degree", [1, 7, 15])
def test_segment_rule_exactness(degree):
    q = segment_rule(degree)
    for a in range(degree + 1):
        val = np.sum(q.weights * q.points ** a)
        assert abs(val - 1.0 / (a + 1)) <= 5e-15


def test_build_quadrature_dispatch():
    assert build_quadrature("segment", 3).points.ndim == 1
    assert build_quadrature("triangle", 3).points.shape[1] == 2
    assert build_quadrature("tetrahedron", 3).points.shape[1] == 3
    with pytest.raises(ValueError):
        build_quadrature("hexahedron", 2)


def test_volumes():
    assert abs(np.sum(tetrahedron_rule(2).weights) - 1 / 6) < 1e-15
    assert abs(np.sum(triangle_rule(2).weights) - 1 / 2) < 1e-15
