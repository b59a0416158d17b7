"""Single-tetrahedron stable extensions: the spectral H1 solve (trace data on
a subset of faces, gradient-seminorm minimal) and the mixed H(div) solve
(divergence and normal-trace data, L2-norm minimal), plus empirical
stability-ratio measurement against overkill-degree and refined proxies."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConstraintViolated, DiscontinuousData, IncompatibleData
from .quadrature import segment_rule, tetrahedron_rule, triangle_rule
from .solver import CouplingRows, LocalRows, solve_constrained
from .spaces import (CellGeometry, FaceFrame, RTNSpace, ScalarSpace,
                     cell_rtn_mass, cell_stiffness, face_values,
                     normal_trace_matrix, scalar_moment, scalar_project,
                     trace_matrix)

SOLVE_TOL = 1e-10


@lru_cache(maxsize=None)
def _embed_matrix(dim, p_from, p_to):
    """Coefficient embedding P_{p_from} -> P_{p_to} on the reference simplex."""
    if dim == 2:
        rule = triangle_rule(p_from + p_to + 2)
    else:
        rule = tetrahedron_rule(p_from + p_to + 2)
    Vf = ScalarSpace(dim, p_from).tabulate(rule.points, grads=False)
    Vt = ScalarSpace(dim, p_to).tabulate(rule.points, grads=False)
    return np.einsum("q,qa,qb->ab", rule.weights, Vt, Vf)


def embed_face(coeffs, p_from, p_to):
    if p_from == p_to:
        return np.asarray(coeffs, dtype=float)
    return _embed_matrix(2, p_from, p_to) @ coeffs


def embed_cell(coeffs, p_from, p_to):
    if p_from == p_to:
        return np.asarray(coeffs, dtype=float)
    return _embed_matrix(3, p_from, p_to) @ coeffs


def _outward(geom, frame):
    """+1 if the frame normal points out of the cell, else -1."""
    inside = geom.verts.mean(axis=0)
    centroid = frame.coords.mean(axis=0)
    return 1.0 if np.dot(frame.normal, centroid - inside) > 0 else -1.0


@dataclass
class ElementH1Problem:
    """Dirichlet faces of one tetrahedron with prescribed trace polynomials.

    dirichlet: list of (FaceFrame, coeff array); each frame must chart a face
    of the cell and the data must agree along shared edges.
    """
    geom: CellGeometry
    dirichlet: list
    degree: int

    def data_scale(self):
        s = 0.0
        rule = triangle_rule(2 * self.degree + 2)
        for frame, coeffs in self.dirichlet:
            s = max(s, float(np.abs(face_values(frame, coeffs, rule.points,
                                                self.degree)).max()))
        return s if s > 0 else 1.0

    def check_continuity(self, tol=None):
        """Raise DiscontinuousData if two Dirichlet faces disagree on a
        shared edge."""
        tol = tol if tol is not None else SOLVE_TOL * self.data_scale() + 1e-13
        nq = self.degree + 2
        t = segment_rule(2 * nq - 1).points
        for i in range(len(self.dirichlet)):
            for j in range(i + 1, len(self.dirichlet)):
                fi, ci = self.dirichlet[i]
                fj, cj = self.dirichlet[j]
                shared = _shared_edge_points(fi, fj)
                if shared is None:
                    continue
                A, B = shared
                pts = A + np.outer(t, B - A)
                vi = face_values(fi, ci, _frame_coords(fi, pts), self.degree)
                vj = face_values(fj, cj, _frame_coords(fj, pts), self.degree)
                d = float(np.abs(vi - vj).max())
                if d > tol:
                    raise DiscontinuousData(
                        f"Dirichlet data jumps by {d:.3e} across a shared edge")


@dataclass
class ElementHdivProblem:
    """Neumann faces (outward normal traces) and divergence of one cell.

    neumann: list of (FaceFrame, coeff array), data meaning w . n_K = r_F;
    volume: coefficient array of the prescribed divergence.
    """
    geom: CellGeometry
    neumann: list
    volume: np.ndarray
    degree: int

    def compatibility_defect(self):
        """(sum_F (r_F,1)_F) - (r_K,1)_K; meaningful when all faces carry data."""
        m2 = scalar_moment(2, self.degree)
        m3 = scalar_moment(3, self.degree)
        tot = -self.geom.amap.det * float(m3 @ self.volume)
        for frame, coeffs in self.neumann:
            tot += frame.double_area * float(m2 @ coeffs)
        return tot


def _frame_coords(frame, pts3d):
    E = np.column_stack([frame.e1, frame.e2])
    sol, *_ = np.linalg.lstsq(E, (np.asarray(pts3d) - frame.origin).T, rcond=None)
    return sol.T


def _shared_edge_points(f1, f2):
    """Endpoints of the common edge of two face charts, or None."""
    shared = []
    for a in f1.coords:
        for b in f2.coords:
            if np.linalg.norm(a - b) < 1e-12:
                shared.append(a)
                break
    if len(shared) != 2:
        return None
    return shared[0], shared[1]


@dataclass
class ElementResult:
    coeffs: np.ndarray
    energy: float
    constraint_residuals: dict
    diagnostics: dict = field(default_factory=dict)


def h1_extend_element(problem, p=None):
    """Trace-constrained gradient-seminorm minimizer in P_p(K)."""
    p = problem.degree if p is None else p
    if p < problem.degree:
        raise ValueError("solve degree below data degree")
    geom = problem.geom
    if not problem.dirichlet:
        n = ScalarSpace(3, p).size
        return ElementResult(np.zeros(n), 0.0, {}, {"trivial": True})
    problem.check_continuity()
    A = cell_stiffness(geom, p)
    rows = []
    for frame, coeffs in problem.dirichlet:
        rows.append(LocalRows(0, trace_matrix(geom, frame, p),
                              embed_face(coeffs, problem.degree, p), "trace"))
    res = solve_constrained([A], [np.zeros(A.shape[0])], rows)
    tol = SOLVE_TOL * problem.data_scale() + 1e-13
    if res.constraint_inf > tol:
        raise ConstraintViolated(
            f"trace residual {res.constraint_inf:.3e} exceeds {tol:.3e}")
    x = res.x[0]
    return ElementResult(x, float(np.sqrt(max(x @ A @ x, 0.0))),
                         res.residuals, res.diagnostics)


def hdiv_extend_element(problem, p=None):
    """Divergence- and normal-trace-constrained L2 minimizer in RTN_p(K)."""
    p = problem.degree if p is None else p
    if p < problem.degree:
        raise ValueError("solve degree below data degree")
    geom = problem.geom
    if len(problem.neumann) == 4:
        defect = problem.compatibility_defect()
        scale = max(abs(geom.amap.det * float(
            scalar_moment(3, problem.degree) @ problem.volume)), 1.0)
        if abs(defect) > SOLVE_TOL * scale + 1e-12:
            raise IncompatibleData(
                f"full-Neumann compatibility defect {defect:.3e}", defect=defect)
    A = cell_rtn_mass(geom, p)
    div_rhs = geom.amap.det * embed_cell(problem.volume, problem.degree, p)
    rows = [LocalRows(0, RTNSpace(p).div_map, div_rhs, "div")]
    for frame, coeffs in problem.neumann:
        sgn = _outward(geom, frame)
        rows.append(LocalRows(0, sgn * normal_trace_matrix(geom, frame, p,
                                                           frame.normal),
                              embed_face(coeffs, problem.degree, p), "ntrace"))
    res = solve_constrained([A], [np.zeros(A.shape[0])], rows)
    scale = max(1.0, float(np.abs(div_rhs).max()),
                max((float(np.abs(c).max()) for _, c in problem.neumann),
                    default=0.0))
    if res.constraint_inf > SOLVE_TOL * scale:
        raise ConstraintViolated(
            f"constraint residual {res.constraint_inf:.3e}")
    x = res.x[0]
    return ElementResult(x, float(np.sqrt(max(x @ A @ x, 0.0))),
                         res.residuals, res.diagnostics)


def element_stability_ratio(problem, p, overkill_delta=6):
    """Energy at degree p over energy at degree p + overkill_delta."""
    if isinstance(problem, ElementH1Problem):
        e_p = h1_extend_element(problem, p).energy
        e_ok = h1_extend_element(problem, p + overkill_delta).energy
    else:
        e_p = hdiv_extend_element(problem, p).energy
        e_ok = hdiv_extend_element(problem, p + overkill_delta).energy
    if e_ok == 0.0:
        return 1.0
    return e_p / e_ok


# --------------------------------------------------------------------------
# refined proxies (one level of red refinement)
# --------------------------------------------------------------------------

_RED_CHILDREN = (
    (0, 4, 5, 6), (1, 4, 7, 8), (2, 5, 7, 9), (3, 6, 8, 9),
    (4, 5, 6, 8), (4, 5, 7, 8), (5, 6, 8, 9), (5, 7, 8, 9),
)
_EDGE_OF_MID = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def red_refine(verts):
    """Red refinement of a tetrahedron into eight children."""
    verts = np.asarray(verts, dtype=float)
    mids = np.array([0.5 * (verts[a] + verts[b]) for a, b in _EDGE_OF_MID])
    coords = np.vstack([verts, mids])
    cells = []
    for c in _RED_CHILDREN:
        V = coords[list(c)]
        if np.linalg.det((V[1:] - V[0]).T) < 0:
            c = (c[0], c[1], c[3], c[2])
        cells.append(c)
    return coords, cells


def _submesh_faces(cells):
    owners = {}
    for ci, c in enumerate(cells):
        for loc in range(4):
            key = tuple(sorted(set(c) - {c[loc]}))
            owners.setdefault(key, []).append(ci)
    return owners


def _face_on(frame, key, coords, tol=1e-12):
    """True if all vertices of the (sub)face lie on the chart's plane and
    inside the charted triangle."""
    for v in coords[list(key)]:
        if abs(np.dot(v - frame.origin, frame.normal)) > tol * (1 + frame.diameter):
            return False
        xy = _frame_coords(frame, v[None, :])[0]
        if xy[0] < -tol or xy[1] < -tol or xy[0] + xy[1] > 1 + tol:
            return False
    return True


def h1_refined_energy(problem, p):
    """Gradient energy of the trace-constrained minimizer over piecewise
    P_p on the red-refined cell (conforming via jump constraints)."""
    if not problem.dirichlet:
        return 0.0
    problem.check_continuity()
    coords, cells = red_refine(problem.geom.verts)
    geoms = [CellGeometry(coords[list(c)]) for c in cells]
    owners = _submesh_faces(cells)
    blocks = [cell_stiffness(g, p) for g in geoms]
    b = [np.zeros(B.shape[0]) for B in blocks]
    rows = []
    for key, own in owners.items():
        frame = FaceFrame(coords[list(key)])
        if len(own) == 2:
            ca, cb = own
            rows.append(CouplingRows(
                (ca, cb), (trace_matrix(geoms[ca], frame, p),
                           -trace_matrix(geoms[cb], frame, p)),
                np.zeros(ScalarSpace(2, p).size), "continuity"))
        else:
            for pframe, pcoeffs in problem.dirichlet:
                if _face_on(pframe, key, coords):
                    rhs = _subface_data(pframe, pcoeffs, problem.degree,
                                        frame, p)
                    rows.append(LocalRows(own[0],
                                          trace_matrix(geoms[own[0]], frame, p),
                                          rhs, "trace"))
                    break
    res = solve_constrained(blocks, b, rows,
                            stabilize_mean=[g.amap.det * scalar_moment(3, p)
                                            for g in geoms])
    tol = SOLVE_TOL * problem.data_scale() + 1e-12
    if res.constraint_inf > tol:
        raise ConstraintViolated(f"refined solve residual {res.constraint_inf:.3e}")
    e = sum(x @ B @ x for x, B in zip(res.x, blocks))
    return float(np.sqrt(max(e, 0.0)))


def hdiv_refined_energy(problem, p):
    """L2 energy of the div/normal-trace constrained minimizer over piecewise
    RTN_p on the red-refined cell (normal continuity via jump constraints)."""
    coords, cells = red_refine(problem.geom.verts)
    geoms = [CellGeometry(coords[list(c)]) for c in cells]
    owners = _submesh_faces(cells)
    blocks = [cell_rtn_mass(g, p) for g in geoms]
    b = [np.zeros(B.shape[0]) for B in blocks]
    rows = []
    for ci, g in enumerate(geoms):
        rk = scalar_project(g, lambda x: _cell_poly_values(problem.geom,
                                                           problem.volume,
                                                           problem.degree, x), p)
        rows.append(LocalRows(ci, RTNSpace(p).div_map, g.amap.det * rk, "div"))
    for key, own in owners.items():
        frame = FaceFrame(coords[list(key)])
        if len(own) == 2:
            ca, cb = own
            rows.append(CouplingRows(
                (ca, cb),
                (normal_trace_matrix(geoms[ca], frame, p, frame.normal),
                 -normal_trace_matrix(geoms[cb], frame, p, frame.normal)),
                np.zeros(ScalarSpace(2, p).size), "ncontinuity"))
        else:
            for pframe, pcoeffs in problem.neumann:
                if _face_on(pframe, key, coords):
                    rhs = _subface_data(pframe, pcoeffs, problem.degree,
                                        frame, p)
                    sgn = _outward(geoms[own[0]], frame)
                    rows.append(LocalRows(
                        own[0],
                        sgn * normal_trace_matrix(geoms[own[0]], frame, p,
                                                  frame.normal),
                        rhs, "ntrace"))
                    break
    res = solve_constrained(blocks, b, rows)
    if res.constraint_inf > SOLVE_TOL * 100:
        raise ConstraintViolated(f"refined solve residual {res.constraint_inf:.3e}")
    e = sum(x @ B @ x for x, B in zip(res.x, blocks))
    return float(np.sqrt(max(e, 0.0)))


def _cell_poly_values(geom, coeffs, p, pts3d):
    V = ScalarSpace(3, p).tabulate(geom.to_reference(pts3d), grads=False)
    return V @ coeffs


def _subface_data(parent_frame, parent_coeffs, p_data, sub_frame, p):
    """Face data restricted to a subface, in the subface's own chart."""
    rule = triangle_rule(2 * p + 2)
    pts3d = sub_frame.to3d(rule.points)
    vals = face_values(parent_frame, parent_coeffs,
                       _frame_coords(parent_frame, pts3d), p_data)
    Vf = ScalarSpace(2, p).tabulate(rule.points, grads=False)
    return np.einsum("q,qa,q->a", rule.weights, Vf, vals)
