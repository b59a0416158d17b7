"""Constrained quadratic minimizer against an independent KKT reference."""

import numpy as np
import pytest

from patchext.solver import (CouplingRows, LocalRows, solve_consistent,
                             solve_constrained)

rng = np.random.default_rng(0)


def reference_minimizer(blocks, b, C, d):
    """Oracle: minimum-norm KKT solve with numpy lstsq (slow, independent)."""
    sizes = [B.shape[0] for B in blocks]
    off = np.concatenate([[0], np.cumsum(sizes)])
    n = off[-1]
    A = np.zeros((n, n))
    for i, B in enumerate(blocks):
        A[off[i]:off[i + 1], off[i]:off[i + 1]] = B
    m = C.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = A
    K[:n, n:] = C.T
    K[n:, :n] = C
    sol, *_ = np.linalg.lstsq(K, np.concatenate([np.concatenate(b), d]),
                              rcond=None)
    return [sol[off[i]:off[i + 1]] for i in range(len(sizes))]


def dense_rows(constraints, sizes):
    off = np.concatenate([[0], np.cumsum(sizes)])
    rows, rhs = [], []
    for g in constraints:
        if isinstance(g, LocalRows):
            R = np.zeros((g.mat.shape[0], off[-1]))
            R[:, off[g.cell]:off[g.cell + 1]] = g.mat
        else:
            R = np.zeros((g.rhs.shape[0], off[-1]))
            for c, m in zip(g.cells, g.mats):
                R[:, off[c]:off[c + 1]] += m
        rows.append(R)
        rhs.append(g.rhs)
    return np.vstack(rows), np.concatenate(rhs)


def random_problem(ncells, n, spd=True, redundant=False):
    blocks = []
    for _ in range(ncells):
        M = rng.standard_normal((n, n))
        blocks.append(M @ M.T + (n * np.eye(n) if spd else 0 * np.eye(n)))
    b = [rng.standard_normal(n) for _ in range(ncells)]
    cons = []
    for ci in range(ncells):
        cons.append(LocalRows(ci, rng.standard_normal((2, n)),
                              rng.standard_normal(2), f"loc{ci}"))
    for ci in range(ncells - 1):
        cons.append(CouplingRows((ci, ci + 1),
                                 (rng.standard_normal((3, n)),
                                  rng.standard_normal((3, n))),
                                 rng.standard_normal(3), "cpl"))
    if redundant:
        # duplicate a coupling group with scaled rows and consistent rhs
        g = cons[-1]
        cons.append(CouplingRows(g.cells, tuple(2.0 * m for m in g.mats),
                                 2.0 * g.rhs, "dup"))
    return blocks, b, cons


@pytest.mark.parametrize("redundant", [False, True])
def test_matches_reference(redundant):
    blocks, b, cons = random_problem(3, 8, redundant=redundant)
    res = solve_constrained(blocks, b, cons)
    sizes = [8, 8, 8]
    C, d = dense_rows(cons, sizes)
    ref = reference_minimizer(blocks, b, C, d)
    for x, y in zip(res.x, ref):
        assert np.abs(x - y).max() < 1e-8
    assert res.constraint_inf < 1e-10


def test_condensed_equals_dense():
    # force both paths on the same problem and compare
    import patchext.solver as S
    blocks, b, cons = random_problem(4, 40)
    saved = S.DENSE_LIMIT
    try:
        S.DENSE_LIMIT = 10 ** 9
        r1 = solve_constrained(blocks, b, cons)
        assert r1.diagnostics["path"] == "dense"
        S.DENSE_LIMIT = 1
        r2 = solve_constrained(blocks, b, cons)
        assert r2.diagnostics["path"] == "condensed"
    finally:
        S.DENSE_LIMIT = saved
    for x, y in zip(r1.x, r2.x):
        assert np.abs(x - y).max() < 1e-9


def test_mean_stabilization_for_singular_blocks():
    # PSD blocks with a common nullspace vector (like elementwise stiffness):
    # condensation needs the rank-one mean shift, dense path works as-is
    import patchext.solver as S
    n, ncells = 12, 3
    ones = np.ones(n)
    blocks = []
    for _ in range(ncells):
        M = rng.standard_normal((n, n - 1))
        B = M @ M.T
        B -= np.outer(B @ ones, ones) / n
        B -= np.outer(ones, ones @ B) / n
        blocks.append(B + 1e-8 * (np.eye(n) - np.outer(ones, ones) / n))
    b = [np.zeros(n) for _ in range(ncells)]
    cons = []
    for ci in range(ncells - 1):
        R = rng.standard_normal((4, n))
        cons.append(CouplingRows((ci, ci + 1), (R, -R),
                                 rng.standard_normal(4), "cpl"))
    # pin the global mean so the reduced problem is definite
    mats = tuple(ones[None, :] for _ in range(ncells))
    cons.append(CouplingRows(tuple(range(ncells)), mats, np.zeros(1), "mean"))
    stab = [ones.copy() for _ in range(ncells)]
    saved = S.DENSE_LIMIT
    try:
        S.DENSE_LIMIT = 1
        r2 = solve_constrained(blocks, b, cons, stabilize_mean=stab)
        assert r2.diagnostics["path"] == "condensed"
        S.DENSE_LIMIT = 10 ** 9
        r1 = solve_constrained(blocks, b, cons)
    finally:
        S.DENSE_LIMIT = saved
    for x, y in zip(r1.x, r2.x):
        assert np.abs(x - y).max() < 1e-6
    assert r2.constraint_inf < 1e-9


def test_solve_consistent_rank_deficient():
    A = rng.standard_normal((10, 6))
    S0 = A @ A.T                     # rank 6, singular
    xtrue = A @ rng.standard_normal(6)
    y = solve_consistent(S0, S0 @ xtrue)
    assert np.abs(S0 @ y - S0 @ xtrue).max() < 1e-8


def test_inconsistent_data_reported_not_hidden():
    blocks, b, cons = random_problem(2, 6)
    # contradictory duplicate of a local group
    g = cons[0]
    cons.append(LocalRows(g.cell, g.mat, g.rhs + 1.0, "bad"))
    res = solve_constrained(blocks, b, cons)
    assert res.constraint_inf > 0.1
