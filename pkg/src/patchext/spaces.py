"""Polynomial spaces on simplices, affine geometry, traces, and Piola maps.

Scalar spaces are orthonormal modal bases on the reference simplex (mass
matrix = identity); the Raviart-Thomas-Nedelec space RTN_p = [P_p]^3 + P_p x
is spanned by the scalar basis times unit vectors plus x times a
homogeneous degree-p basis, orthonormalized on the reference element.

Face polynomials live in intrinsic 2D coordinates of a per-face frame; the
frame is canonical (derived from the sorted global vertex triple), so the
two cells sharing a face always project onto the same representation.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _backend as bk
from .errors import FaceNotInCell, SingularMap
from .quadrature import tetrahedron_rule, triangle_rule


# --------------------------------------------------------------------------
# affine maps and cell geometry
# --------------------------------------------------------------------------

class AffineMap:
    """x -> B x + b with cached inverse."""

    def __init__(self, B, b):
        self.B = np.asarray(B, dtype=float).reshape(3, 3)
        self.b = np.asarray(b, dtype=float).reshape(3)
        self.det = float(np.linalg.det(self.B))
        if self.det == 0.0 or not np.isfinite(self.det):
            raise SingularMap("affine map has zero or non-finite determinant")
        self.Binv = np.linalg.inv(self.B)

    def apply(self, pts):
        return np.asarray(pts, dtype=float) @ self.B.T + self.b

    def inverse_apply(self, pts):
        return (np.asarray(pts, dtype=float) - self.b) @ self.Binv.T

    def inverse(self):
        return AffineMap(self.Binv, -self.Binv @ self.b)

    @staticmethod
    def between(src, dst):
        """Affine map sending the vertex array src (4,3) onto dst (4,3)."""
        src = np.asarray(src, dtype=float)
        dst = np.asarray(dst, dtype=float)
        Bs = (src[1:] - src[0]).T
        Bd = (dst[1:] - dst[0]).T
        B = Bd @ np.linalg.inv(Bs)
        return AffineMap(B, dst[0] - B @ src[0])


REF_TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


class CellGeometry:
    """A tetrahedron together with its reference map (det > 0 required)."""

    def __init__(self, verts):
        self.verts = np.asarray(verts, dtype=float).reshape(4, 3)
        B = (self.verts[1:] - self.verts[0]).T
        self.amap = AffineMap(B, self.verts[0])
        if self.amap.det <= 0.0:
            raise SingularMap("cell is negatively oriented")
        self.volume = self.amap.det / 6.0

    @property
    def diameter(self):
        d = self.verts[:, None, :] - self.verts[None, :, :]
        return float(np.sqrt((d * d).sum(-1)).max())

    @property
    def inradius(self):
        areas = 0.0
        for f in range(4):
            tri = np.delete(self.verts, f, axis=0)
            areas += 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
        return 3.0 * self.volume / areas

    def to_reference(self, pts):
        return self.amap.inverse_apply(pts)

    def from_reference(self, pts):
        return self.amap.apply(pts)


# --------------------------------------------------------------------------
# scalar spaces
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _scalar_norms(dim, p):
    if dim == 3:
        rule = tetrahedron_rule(2 * p + 2)
        vals, _ = bk.tet_onb_raw(rule.points, p)
    else:
        rule = triangle_rule(2 * p + 2)
        vals, _ = bk.tri_onb_raw(rule.points, p)
    return np.sqrt(np.einsum("q,qn,qn->n", rule.weights, vals, vals))


@dataclass(frozen=True)
class ScalarSpace:
    """Orthonormal modal P_p basis on the reference simplex of dimension dim."""

    dim: int
    degree: int

    @property
    def size(self):
        return bk.tet_mode_count(self.degree) if self.dim == 3 \
            else bk.tri_mode_count(self.degree)

    def tabulate(self, pts, grads=True):
        if self.dim == 3:
            V, G = bk.tet_onb_raw(pts, self.degree)
        else:
            V, G = bk.tri_onb_raw(pts, self.degree)
        n = _scalar_norms(self.dim, self.degree)
        V = V / n
        if not grads:
            return V
        return V, G / n[None, :, None]


def scalar_space(dim, p):
    return ScalarSpace(dim, p)


@lru_cache(maxsize=8)
def _tet_tables(p):
    """Reference-volume-rule tables (exactness 2p+2) for degree p."""
    rule = tetrahedron_rule(2 * p + 2)
    V, G = ScalarSpace(3, p).tabulate(rule.points)
    return rule, V, G


@lru_cache(maxsize=8)
def scalar_grad_gram(p):
    """G[d,e,j,k] = int_ref  d_d phi_j  d_e phi_k."""
    rule, _, G = _tet_tables(p)
    return np.einsum("q,qjd,qke->dejk", rule.weights, G, G, optimize=True)


@lru_cache(maxsize=8)
def scalar_derivative_maps(p):
    """D[d][k,j] = (phi_k, d_d phi_j)_ref, the exact coefficient map of d_d."""
    rule, V, G = _tet_tables(p)
    return np.einsum("q,qk,qjd->dkj", rule.weights, V, G, optimize=True)


@lru_cache(maxsize=None)
def scalar_moment(dim, p):
    """Coefficient vector of (phi_n, 1) on the reference simplex."""
    if dim == 3:
        rule = tetrahedron_rule(2 * p + 2)
    else:
        rule = triangle_rule(2 * p + 2)
    V = ScalarSpace(dim, p).tabulate(rule.points, grads=False)
    return rule.weights @ V


# --------------------------------------------------------------------------
# RTN spaces
# --------------------------------------------------------------------------

def _rtn_raw_tabulate(pts, p):
    """Raw spanning set [phi_j e_d | x q_m] as (npts, N, 3)."""
    pts = np.asarray(pts, dtype=float)
    V = ScalarSpace(3, p).tabulate(pts, grads=False)
    Q = bk.tet_homog_raw(pts, p)
    npts, Np = V.shape
    Nh = Q.shape[1]
    out = np.zeros((npts, 3 * Np + Nh, 3))
    for d in range(3):
        out[:, d * Np:(d + 1) * Np, d] = V
    out[:, 3 * Np:, :] = Q[:, :, None] * pts[:, None, :]
    return out


@lru_cache(maxsize=4)
def _rtn_setup(p):
    """Orthonormalizing transform T and divergence map for RTN_p."""
    rule = tetrahedron_rule(2 * p + 2)
    raw = _rtn_raw_tabulate(rule.points, p)
    G = np.einsum("q,qnd,qmd->nm", rule.weights, raw, raw, optimize=True)
    T = np.linalg.inv(np.linalg.cholesky(G)).T
    # one refinement round keeps orthonormality at machine precision
    W = np.einsum("qnd,nm->qmd", raw, T, optimize=True)
    G2 = np.einsum("q,qnd,qmd->nm", rule.weights, W, W, optimize=True)
    T = T @ np.linalg.inv(np.linalg.cholesky(G2)).T

    Np = bk.tet_mode_count(p)
    Nh = bk.homog_mode_count(p)
    D = scalar_derivative_maps(p)
    Vh = bk.tet_homog_raw(rule.points, p)
    Vs = ScalarSpace(3, p).tabulate(rule.points, grads=False)
    Qproj = np.einsum("q,qk,qm->km", rule.weights, Vs, Vh, optimize=True)
    DIVraw = np.concatenate([D[0], D[1], D[2], (3.0 + p) * Qproj], axis=1)
    return T, DIVraw @ T


@dataclass(frozen=True)
class RTNSpace:
    """Orthonormal modal RTN_p basis on the reference tetrahedron."""

    degree: int

    @property
    def size(self):
        return 3 * bk.tet_mode_count(self.degree) + bk.homog_mode_count(self.degree)

    @property
    def scalar_size(self):
        return bk.tet_mode_count(self.degree)

    def tabulate(self, pts):
        T, _ = _rtn_setup(self.degree)
        raw = _rtn_raw_tabulate(pts, self.degree)
        return np.einsum("qnd,nm->qmd", raw, T, optimize=True)

    @property
    def div_map(self):
        """(N_p x N) coefficient map: div of RTN_p in the scalar P_p basis."""
        return _rtn_setup(self.degree)[1]


def rtn_space(p):
    return RTNSpace(p)


@lru_cache(maxsize=3)
def rtn_gram_tensor(p):
    """G[d,e,m,n] = int_ref W_m^d W_n^e over the reference tetrahedron."""
    rule = tetrahedron_rule(2 * p + 2)
    W = RTNSpace(p).tabulate(rule.points)
    return np.einsum("q,qmd,qne->demn", rule.weights, W, W, optimize=True)


# --------------------------------------------------------------------------
# physical-cell operators
# --------------------------------------------------------------------------

def cell_mass(geom, p):
    """Scalar mass matrix on a cell: |det| * I for the mapped modal basis."""
    return geom.amap.det * np.eye(bk.tet_mode_count(p))


def cell_stiffness(geom, p):
    Ginv = geom.amap.Binv @ geom.amap.Binv.T
    G = scalar_grad_gram(p)
    return geom.amap.det * np.einsum("de,dejk->jk", Ginv, G)


def cell_rtn_mass(geom, p):
    C = (geom.amap.B.T @ geom.amap.B) / geom.amap.det
    G = rtn_gram_tensor(p)
    return np.einsum("de,demn->mn", C, G)


def scalar_values(geom, coeffs, pts3d, p):
    V = ScalarSpace(3, p).tabulate(geom.to_reference(pts3d), grads=False)
    return V @ coeffs


def scalar_gradients(geom, coeffs, pts3d, p):
    _, G = ScalarSpace(3, p).tabulate(geom.to_reference(pts3d))
    return np.einsum("qnd,n->qd", G, coeffs) @ geom.amap.Binv


def rtn_values(geom, coeffs, pts3d, p):
    """Contravariant-Piola-mapped field values, (npts, 3)."""
    W = RTNSpace(p).tabulate(geom.to_reference(pts3d))
    ref = np.einsum("qnd,n->qd", W, coeffs)
    return ref @ (geom.amap.B.T / geom.amap.det)


def rtn_div_coeffs(geom, coeffs, p):
    """Coefficients of div(w) in the cell's scalar P_p basis."""
    return (RTNSpace(p).div_map @ coeffs) / geom.amap.det


def scalar_project(geom, func, p, extra_degree=0):
    """L2 projection of func(points (n,3)) -> (n,) onto P_p on the cell."""
    rule = tetrahedron_rule(2 * p + 2 + extra_degree)
    pts = geom.from_reference(rule.points)
    V = ScalarSpace(3, p).tabulate(rule.points, grads=False)
    return np.einsum("q,qn,q->n", rule.weights, V, func(pts))


def rtn_project(geom, func, p, extra_degree=0):
    """L2 projection of a vector field onto the cell's RTN_p basis."""
    rule = tetrahedron_rule(2 * p + 2 + extra_degree)
    pts = geom.from_reference(rule.points)
    W = RTNSpace(p).tabulate(rule.points)
    phys = np.einsum("qnd,de->qne", W, geom.amap.B.T / geom.amap.det)
    rhs = np.einsum("q,qnd,qd->n", rule.weights * geom.amap.det, phys, func(pts))
    return np.linalg.solve(cell_rtn_mass(geom, p), rhs)


# --------------------------------------------------------------------------
# face frames, traces, jumps
# --------------------------------------------------------------------------

class FaceFrame:
    """Intrinsic 2D chart of a triangular face.

    Built from the face's vertex coordinates in canonical (sorted global id)
    order, so every cell sharing the face uses the same chart.  Face
    polynomials are coefficient vectors in the triangle modal basis over the
    reference triangle; the physical face Gram is (2*area) * I.
    """

    def __init__(self, coords):
        coords = np.asarray(coords, dtype=float).reshape(3, 3)
        self.origin = coords[0]
        self.e1 = coords[1] - coords[0]
        self.e2 = coords[2] - coords[0]
        nv = np.cross(self.e1, self.e2)
        self.double_area = float(np.linalg.norm(nv))
        if self.double_area == 0.0:
            raise SingularMap("degenerate face frame")
        self.normal = nv / self.double_area
        self.area = 0.5 * self.double_area
        self.coords = coords

    def to3d(self, xy):
        xy = np.asarray(xy, dtype=float)
        return self.origin + np.outer(xy[:, 0], self.e1) + np.outer(xy[:, 1], self.e2)

    @property
    def diameter(self):
        d = self.coords[:, None, :] - self.coords[None, :, :]
        return float(np.sqrt((d * d).sum(-1)).max())


def face_values(frame, coeffs, xy, p):
    V = ScalarSpace(2, p).tabulate(xy, grads=False)
    return V @ coeffs


def face_project(frame, func, p, extra_degree=0):
    """Project func(points3d) onto the face's P_p basis (reference measure)."""
    rule = triangle_rule(2 * p + 2 + extra_degree)
    V = ScalarSpace(2, p).tabulate(rule.points, grads=False)
    return np.einsum("q,qn,q->n", rule.weights, V, func(frame.to3d(rule.points)))


def local_face_of(cell, face_key):
    """Local index (opposite vertex position) of a global face in a cell."""
    fs = set(face_key)
    for loc in range(4):
        if set(cell) - {cell[loc]} == fs:
            return loc
    raise FaceNotInCell(f"face {face_key} not in cell {cell}")


def trace_matrix(geom, frame, p):
    """Rows: face-basis coefficients of the trace of each cell basis function."""
    rule = triangle_rule(2 * p + 2)
    pts3d = frame.to3d(rule.points)
    Vc = ScalarSpace(3, p).tabulate(geom.to_reference(pts3d), grads=False)
    Vf = ScalarSpace(2, p).tabulate(rule.points, grads=False)
    return np.einsum("q,qa,qn->an", rule.weights, Vf, Vc, optimize=True)


def normal_trace_matrix(geom, frame, p, normal):
    """Face-basis coefficients of w . normal for each RTN basis function."""
    rule = triangle_rule(2 * p + 2)
    pts3d = frame.to3d(rule.points)
    W = RTNSpace(p).tabulate(geom.to_reference(pts3d))
    phys_n = np.einsum("qnd,d->qn", W, (geom.amap.B / geom.amap.det).T @ normal)
    Vf = ScalarSpace(2, p).tabulate(rule.points, grads=False)
    return np.einsum("q,qa,qn->an", rule.weights, Vf, phys_n, optimize=True)


def trace_on_face(geom, coeffs, frame, p):
    """Exact degree-p face representation of a cell polynomial's trace."""
    return trace_matrix(geom, frame, p) @ coeffs


def normal_trace_on_face(geom, coeffs, frame, p, normal):
    return normal_trace_matrix(geom, frame, p, normal) @ coeffs


# --------------------------------------------------------------------------
# pullback and Piola
# --------------------------------------------------------------------------

def pullback_scalar(amap, coeffs, src_geom, dst_geom, p):
    """Coefficients of v o T on dst cell, T = amap : dst -> src."""
    rule = tetrahedron_rule(2 * p + 2)
    pts = dst_geom.from_reference(rule.points)
    vals = scalar_values(src_geom, coeffs, amap.apply(pts), p)
    V = ScalarSpace(3, p).tabulate(rule.points, grads=False)
    return np.einsum("q,qn,q->n", rule.weights, V, vals)


def piola_contravariant(amap, coeffs, src_geom, dst_geom, p):
    """psi(w) = det(J) J^{-1} (w o T) on dst cell, T = amap : dst -> src.

    Satisfies div(psi(w)) = det(J) (div w) o T and the weak normal-trace
    correspondence; the result is again in RTN_p.
    """
    rule = tetrahedron_rule(2 * p + 4)
    pts = dst_geom.from_reference(rule.points)
    wvals = rtn_values(src_geom, coeffs, amap.apply(pts), p)
    psi = amap.det * wvals @ amap.Binv.T
    W = RTNSpace(p).tabulate(rule.points)
    phys = np.einsum("qnd,de->qne", W, dst_geom.amap.B.T / dst_geom.amap.det)
    rhs = np.einsum("q,qnd,qd->n", rule.weights * dst_geom.amap.det, phys, psi)
    return np.linalg.solve(cell_rtn_mass(dst_geom, p), rhs)
