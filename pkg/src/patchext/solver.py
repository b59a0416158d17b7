"""Constrained quadratic minimization over broken spaces.

Solves   min  1/2 x^T A x - b^T x   s.t.   C x = d

where A is block diagonal over cells (stiffness or mass blocks) and the
constraint rows are either local to one cell (traces, divergences) or
couple several cells (jumps, global mean).  Two paths:

* dense: assemble the full KKT system and solve by least squares -- the
  constraint rows of patch problems are consistently redundant (edge
  telescoping, divergence theorem), so the KKT matrix is singular but
  consistent and the x-part of the minimum-norm solution is the unique
  minimizer;
* condensed: factor per-cell local KKT blocks, form the dense Schur
  complement on the coupling multipliers, solve it by least squares, and
  back-substitute.  Stiffness cells without local constraint rows get a
  rank-one mean stabilization (exactly compensated through an auxiliary
  coupling unknown), keeping every local block invertible.

Constraint residuals are reported, never assumed: callers decide whether a
residual means inconsistent data.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import SingularSystem

DENSE_LIMIT = 900


def solve_consistent(S, r):
    """Any solution of a consistent (possibly rank-deficient) square system
    via column-pivoted QR; much cheaper than SVD-based least squares.  The
    primal recovery is invariant under the choice within the solution set."""
    n = S.shape[0]
    if n == 0:
        return np.zeros(0)
    Q, R, perm = sla.qr(S, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    tol = max(S.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    y = np.zeros(n)
    if rank:
        w = sla.solve_triangular(R[:rank, :rank], (Q.T @ r)[:rank])
        y[perm[:rank]] = w
    return y


def _nullspace_minimize(A, b, C, d):
    """Minimize 1/2 x'Ax - b'x subject to consistent constraints Cx = d by
    elimination: particular solution + SPD solve on the constraint nullspace."""
    n = A.shape[0]
    if C.shape[0] == 0:
        try:
            cf = sla.cho_factor(A)
            return sla.cho_solve(cf, b)
        except Exception:
            return solve_consistent(A, b)
    Q, R, perm = sla.qr(C.T, pivoting=True, mode="full")
    k = min(C.shape)
    diag = np.abs(np.diag(R[:k, :k]))
    tol = max(C.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    dp = d[perm]
    if rank:
        w1 = sla.solve_triangular(R[:rank, :rank].T, dp[:rank], lower=True)
        x0 = Q[:, :rank] @ w1
    else:
        x0 = np.zeros(n)
    Z = Q[:, rank:]
    if Z.shape[1] == 0:
        return x0
    H = Z.T @ A @ Z
    g = Z.T @ (b - A @ x0)
    try:
        cf = sla.cho_factor(H)
        z = sla.cho_solve(cf, g)
    except Exception:
        z = solve_consistent(H, g)
    return x0 + Z @ z


@dataclass
class LocalRows:
    cell: int
    mat: np.ndarray
    rhs: np.ndarray
    tag: str = ""


@dataclass
class CouplingRows:
    cells: tuple
    mats: tuple
    rhs: np.ndarray
    tag: str = ""


@dataclass
class SolveResult:
    x: list
    residuals: dict            # tag -> max |Cx - d| over rows of that tag
    diagnostics: dict = field(default_factory=dict)

    @property
    def constraint_inf(self):
        return max(self.residuals.values(), default=0.0)


def _check_shapes(blocks, b, constraints):
    sizes = [B.shape[0] for B in blocks]
    for g in constraints:
        if isinstance(g, LocalRows):
            assert g.mat.shape[1] == sizes[g.cell]
        else:
            for c, m in zip(g.cells, g.mats):
                assert m.shape[1] == sizes[c]
    return sizes


def solve_constrained(blocks, b, constraints, stabilize_mean=None):
    """Minimize over the broken space subject to the given rows.

    blocks : per-cell SPD/PSD objective matrices
    b : per-cell linear-term vectors
    constraints : list of LocalRows / CouplingRows
    stabilize_mean : per-cell moment vectors (v,1)_K, required by the
        condensed path for stiffness cells without local rows
    """
    sizes = _check_shapes(blocks, b, constraints)
    ntot = sum(sizes)
    nrows = sum(g.mat.shape[0] if isinstance(g, LocalRows)
                else g.rhs.shape[0] for g in constraints)
    if len(sizes) == 1 or ntot + nrows <= DENSE_LIMIT:
        return _solve_dense(blocks, b, constraints, sizes)
    try:
        return _solve_condensed(blocks, b, constraints, sizes, stabilize_mean)
    except SingularSystem:
        return _solve_dense(blocks, b, constraints, sizes)


def _offsets(sizes):
    off = np.zeros(len(sizes) + 1, dtype=int)
    np.cumsum(sizes, out=off[1:])
    return off


def _residuals(x, constraints):
    res = {}
    for g in constraints:
        if isinstance(g, LocalRows):
            r = g.mat @ x[g.cell] - g.rhs
        else:
            r = -g.rhs.astype(float)
            for c, m in zip(g.cells, g.mats):
                r += m @ x[c]
        key = g.tag or "untagged"
        val = float(np.abs(r).max()) if r.size else 0.0
        res[key] = max(res.get(key, 0.0), val)
    return res


def _solve_dense(blocks, b, constraints, sizes):
    off = _offsets(sizes)
    n = off[-1]
    rows = []
    rhs = []
    for g in constraints:
        if isinstance(g, LocalRows):
            R = np.zeros((g.mat.shape[0], n))
            R[:, off[g.cell]:off[g.cell + 1]] = g.mat
        else:
            R = np.zeros((g.rhs.shape[0], n))
            for c, m in zip(g.cells, g.mats):
                R[:, off[c]:off[c + 1]] += m
        rows.append(R)
        rhs.append(np.asarray(g.rhs, dtype=float))
    C = np.vstack(rows) if rows else np.zeros((0, n))
    d = np.concatenate(rhs) if rows else np.zeros(0)
    A = np.zeros((n, n))
    for ci, B in enumerate(blocks):
        A[off[ci]:off[ci + 1], off[ci]:off[ci + 1]] = B
    sol = _nullspace_minimize(A, np.concatenate(b), C, d)
    x = [sol[off[ci]:off[ci + 1]] for ci in range(len(sizes))]
    res = _residuals(x, constraints)
    return SolveResult(x, res, {"path": "dense", "size": n + C.shape[0]})


def _solve_condensed(blocks, b, constraints, sizes, stabilize_mean):
    ncells = len(sizes)
    local = [[] for _ in range(ncells)]
    coupling = []
    for g in constraints:
        if isinstance(g, LocalRows):
            local[g.cell].append(g)
        else:
            coupling.append(g)

    stab = [False] * ncells
    for ci in range(ncells):
        if not local[ci]:
            # stiffness block without local rows: singular on constants
            if stabilize_mean is None:
                raise SingularSystem("cell without local rows and no "
                                     "mean stabilization available")
            stab[ci] = True

    # coupling unknown layout: constraint groups first, then z-stabilizers
    coff = [0]
    for g in coupling:
        coff.append(coff[-1] + g.rhs.shape[0])
    zoff = {ci: coff[-1] + k for k, ci in
            enumerate([ci for ci in range(ncells) if stab[ci]])}
    ny = coff[-1] + sum(stab)

    S = np.zeros((ny, ny))
    rS = np.zeros(ny)
    for gi, g in enumerate(coupling):
        rS[coff[gi]:coff[gi + 1]] = g.rhs

    lu_store = []
    G_store = []   # (row index array, compact matrix) per cell
    rhs_store = []
    for ci in range(ncells):
        A = blocks[ci]
        nloc = sizes[ci]
        Cl = np.vstack([g.mat for g in local[ci]]) if local[ci] \
            else np.zeros((0, nloc))
        dl = np.concatenate([g.rhs for g in local[ci]]) if local[ci] \
            else np.zeros(0)
        if stab[ci]:
            mvec = stabilize_mean[ci]
            sig = (np.trace(A) / nloc) / (mvec @ mvec) + 1.0
            A = A + sig * np.outer(mvec, mvec)
            S[zoff[ci], zoff[ci]] += 1.0 / sig
        nl = nloc + Cl.shape[0]
        L = np.zeros((nl, nl))
        L[:nloc, :nloc] = A
        L[:nloc, nloc:] = Cl.T
        L[nloc:, :nloc] = Cl
        # compact coupling rows touching this cell (+ its z row)
        ridx = []
        rmat = []
        for gi, g in enumerate(coupling):
            for c, m in zip(g.cells, g.mats):
                if c == ci:
                    ridx.extend(range(coff[gi], coff[gi + 1]))
                    rmat.append(m)
        if stab[ci]:
            ridx.append(zoff[ci])
            rmat.append(-stabilize_mean[ci][None, :])
        ridx = np.asarray(ridx, dtype=int)
        Gc = np.zeros((len(ridx), nl))
        if rmat:
            Gc[:, :nloc] = np.vstack(rmat)
        try:
            lu = sla.lu_factor(L)
        except Exception as exc:
            raise SingularSystem(f"local block {ci} not factorizable: {exc}")
        umin = np.abs(np.diag(lu[0])).min() if nl else 1.0
        umax = np.abs(np.diag(lu[0])).max() if nl else 1.0
        if umax == 0.0 or umin < 1e-14 * umax:
            raise SingularSystem(f"local block {ci} numerically singular")
        rhs_loc = np.concatenate([b[ci], dl])
        if len(ridx):
            X = sla.lu_solve(lu, Gc.T)      # L^{-1} Gc^T
            S[np.ix_(ridx, ridx)] -= Gc @ X
            rS[ridx] -= Gc @ sla.lu_solve(lu, rhs_loc)
        lu_store.append(lu)
        G_store.append((ridx, Gc))
        rhs_store.append(rhs_loc)

    y = solve_consistent(S, rS)
    x = []
    for ci in range(ncells):
        ridx, Gc = G_store[ci]
        rhs_loc = rhs_store[ci]
        if len(ridx):
            rhs_loc = rhs_loc - Gc.T @ y[ridx]
        sol = sla.lu_solve(lu_store[ci], rhs_loc)
        x.append(sol[:sizes[ci]])
    res = _residuals(x, constraints)
    return SolveResult(x, res, {"path": "condensed", "schur": ny})
