"""Geometry, RTN spaces, traces, jumps, pullback, and Piola maps."""

import numpy as np
import pytest

from patchext.errors import FaceNotInCell, SingularMap
from patchext.quadrature import tetrahedron_rule
from patchext.spaces import (REF_TET, AffineMap, CellGeometry, FaceFrame,
                             RTNSpace, ScalarSpace, cell_rtn_mass,
                             cell_stiffness, face_project, face_values,
                             local_face_of, normal_trace_matrix,
                             piola_contravariant, pullback_scalar,
                             rtn_div_coeffs, rtn_project, rtn_values,
                             scalar_gradients, scalar_project, scalar_values,
                             trace_on_face)

rng = np.random.default_rng(42)

SKEW = CellGeometry(np.array([[0.1, 0.0, 0.0], [1.2, 0.1, -0.2],
                              [0.3, 1.4, 0.2], [-0.1, 0.3, 1.1]]))
G0 = CellGeometry(REF_TET)
FR = {i: FaceFrame(np.delete(REF_TET, i, axis=0)) for i in range(4)}


def test_affine_map_roundtrip():
    A = AffineMap(rng.standard_normal((3, 3)) + 3 * np.eye(3),
                  rng.standard_normal(3))
    pts = rng.standard_normal((10, 3))
    assert np.abs(A.inverse_apply(A.apply(pts)) - pts).max() < 1e-13
    with pytest.raises(SingularMap):
        AffineMap(np.zeros((3, 3)), np.zeros(3))


def test_trace_constant_and_vanishing_barycentric():
    c1 = scalar_project(G0, lambda x: np.ones(len(x)), 1)
    t = trace_on_face(G0, c1, FR[3], 1)
    assert np.abs(face_values(FR[3], t, np.array([[0.2, 0.3]]), 1) - 1).max() < 1e-13
    # barycentric of the opposite vertex vanishes on the face
    lam3 = scalar_project(G0, lambda x: x[:, 2], 1)   # vanishes on z=0 face
    t = trace_on_face(G0, lam3, FR[3], 1)
    assert np.abs(t).max() < 1e-14


def test_trace_x_squared_on_z0_plane():
    cxx = scalar_project(G0, lambda x: x[:, 0] ** 2, 2)
    t = trace_on_face(G0, cxx, FR[3], 2)
    xy = rng.random((10, 2))
    xy /= xy.sum(axis=1)[:, None] + 0.4
    vals = face_values(FR[3], t, xy, 2)
    pts3 = FR[3].to3d(xy)
    assert np.abs(vals - pts3[:, 0] ** 2).max() < 1e-13


def test_local_face_of():
    assert local_face_of((7, 3, 9, 5), (3, 5, 9)) == 0
    with pytest.raises(FaceNotInCell):
        local_face_of((7, 3, 9, 5), (1, 2, 3))


@pytest.mark.parametrize("p", [0, 2, 5, 8])
def test_rtn_dof_injectivity(p):
    sp = RTNSpace(p)
    rows = [100 * sp.div_map]
    for i in range(4):
        fr = FR[i]
        rows.append(normal_trace_matrix(G0, fr, p, fr.normal))
    if p >= 1:
        rule = tetrahedron_rule(2 * p + 2)
        W = sp.tabulate(rule.points)
        Vm = ScalarSpace(3, p - 1).tabulate(rule.points, grads=False)
        for d in range(3):
            rows.append(np.einsum("q,qk,qn->kn", rule.weights, Vm, W[:, :, d]))
    s = np.linalg.svd(np.vstack(rows), compute_uv=False)
    assert s[sp.size - 1] > 1e-7 * s[0]


def test_piola_identity_map():
    c = rng.standard_normal(RTNSpace(2).size)
    ident = AffineMap(np.eye(3), np.zeros(3))
    c2 = piola_contravariant(ident, c, SKEW, SKEW, 2)
    assert np.abs(c - c2).max() < 1e-12


def test_piola_uniform_scaling_of_constant():
    # psi(w) = det(J) J^-1 (w o T); uniform scaling by s: constant c -> s^2 c
    s = 1.7
    T = AffineMap(s * np.eye(3), np.zeros(3))
    src = CellGeometry(s * REF_TET)
    cvec = np.array([0.3, -0.2, 0.9])
    c = rtn_project(src, lambda x: np.tile(cvec, (len(x), 1)), 0)
    cpsi = piola_contravariant(T, c, src, G0, 0)
    pts = G0.from_reference(tetrahedron_rule(2).points)
    vals = rtn_values(G0, cpsi, pts, 0)
    assert np.abs(vals - s ** 2 * cvec).max() < 1e-12


@pytest.mark.parametrize("p", [0, 2, 4])
def test_piola_divergence_identity(p):
    # div(psi(w)) = det(J) (div w) o T, on random fields
    T = AffineMap.between(G0.verts, SKEW.verts)
    c = rng.standard_normal(RTNSpace(p).size)
    cpsi = piola_contravariant(T, c, SKEW, G0, p)
    pts = G0.from_reference(tetrahedron_rule(2 * p + 4).points)
    dpsi = scalar_values(G0, rtn_div_coeffs(G0, cpsi, p), pts, p)
    dw = scalar_values(SKEW, rtn_div_coeffs(SKEW, c, p), T.apply(pts), p)
    scale = max(1.0, np.abs(dw).max())
    assert np.abs(dpsi - T.det * dw).max() < 1e-12 * scale


def test_piola_w_equals_x_div_constant():
    # w = x on the reference tet: div(psi(w)) = 3 det(J) everywhere
    T = AffineMap.between(SKEW.verts, G0.verts)   # SKEW -> ref
    cx = rtn_project(G0, lambda x: x, 0)
    cpsi = piola_contravariant(T, cx, G0, SKEW, 0)
    pts = SKEW.from_reference(tetrahedron_rule(4).points)
    dv = scalar_values(SKEW, rtn_div_coeffs(SKEW, cpsi, 0), pts, 0)
    assert np.abs(dv - 3 * T.det).max() < 1e-12 * max(1.0, abs(3 * T.det))


def test_piola_weak_normal_trace_correspondence():
    # face moments of psi(w).n match the mapped moments for all test polys
    p = 2
    T = AffineMap.between(G0.verts, SKEW.verts)   # ref -> SKEW
    c = rng.standard_normal(RTNSpace(p).size)
    cpsi = piola_contravariant(T, c, SKEW, G0, p)
    for i in range(4):
        fr_ref = FR[i]
        tri = T.apply(fr_ref.coords)
        fr_phys = FaceFrame(tri)
        n_ref = fr_ref.normal
        out_ref = 1.0 if np.dot(n_ref, fr_ref.coords.mean(axis=0)
                                - G0.verts.mean(axis=0)) > 0 else -1.0
        n_phys = fr_phys.normal
        out_phys = 1.0 if np.dot(n_phys, fr_phys.coords.mean(axis=0)
                                 - SKEW.verts.mean(axis=0)) > 0 else -1.0
        m_ref = normal_trace_matrix(G0, fr_ref, p, out_ref * n_ref) @ cpsi
        m_phys = normal_trace_matrix(SKEW, fr_phys, p, out_phys * n_phys) @ c
        # weak correspondence: (psi(w).n_ref, q o id)_Fref = (w.n, q o T^-1) dsphys
        # with the frame charts matched by T, the moment vectors agree up to
        # the surface Jacobian, which is constant per face:
        ratio_insensitive = np.linalg.norm(m_ref) * np.linalg.norm(m_phys)
        if ratio_insensitive < 1e-20:
            continue
        cosang = m_ref @ m_phys / np.sqrt(m_ref @ m_ref) / np.sqrt(m_phys @ m_phys)
        assert abs(abs(cosang) - 1.0) < 1e-10


def test_pullback_scalar():
    T = AffineMap.between(G0.verts, SKEW.verts)   # G0 -> SKEW
    c = rng.standard_normal(ScalarSpace(3, 3).size)
    cpb = pullback_scalar(T, c, SKEW, G0, 3)      # (v o T) on G0
    pts = G0.from_reference(tetrahedron_rule(8).points)
    assert np.abs(scalar_values(G0, cpb, pts, 3)
                  - scalar_values(SKEW, c, T.apply(pts), 3)).max() < 1e-11
    # constant pulls back to the same constant
    c1 = scalar_project(SKEW, lambda x: np.full(len(x), 2.5), 0)
    cpb = pullback_scalar(T, c1, SKEW, G0, 0)
    assert np.abs(scalar_values(G0, cpb, pts, 0) - 2.5).max() < 1e-12


def test_grad_chain_rule():
    # grad(v o T) = J^T (grad v) o T
    T = AffineMap.between(G0.verts, SKEW.verts)
    c = rng.standard_normal(ScalarSpace(3, 4).size)
    cpb = pullback_scalar(T, c, SKEW, G0, 4)
    pts = G0.from_reference(tetrahedron_rule(8).points)
    g1 = scalar_gradients(G0, cpb, pts, 4)
    g2 = scalar_gradients(SKEW, c, T.apply(pts), 4) @ T.B
    assert np.abs(g1 - g2).max() < 1e-10 * max(1.0, np.abs(g2).max())


def test_stiffness_and_mass_oracles():
    p = 3
    rule = tetrahedron_rule(2 * p + 2)
    pts = SKEW.from_reference(rule.points)
    w = rule.weights * SKEW.amap.det
    n = ScalarSpace(3, p).size
    c1, c2 = rng.standard_normal(n), rng.standard_normal(n)
    g1 = scalar_gradients(SKEW, c1, pts, p)
    g2 = scalar_gradients(SKEW, c2, pts, p)
    S = cell_stiffness(SKEW, p)
    assert abs(c1 @ S @ c2 - np.sum(w * np.sum(g1 * g2, 1))) < 1e-11
    m = RTNSpace(p).size
    d1, d2 = rng.standard_normal(m), rng.standard_normal(m)
    v1 = rtn_values(SKEW, d1, pts, p)
    v2 = rtn_values(SKEW, d2, pts, p)
    M = cell_rtn_mass(SKEW, p)
    assert abs(d1 @ M @ d2 - np.sum(w * np.sum(v1 * v2, 1))) < 1e-11


def test_face_project_partition_of_unity():
    fr = FaceFrame(np.array([[0, 0, 0], [2, 0, 0], [0, 3, 0.0]]))
    c = face_project(fr, lambda x: np.ones(len(x)), 2)
    xy = rng.random((5, 2)) * 0.3
    assert np.abs(face_values(fr, c, xy, 2) - 1).max() < 1e-13
