"""Patch topology: classification, fans, regularity, compatibility checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchext.errors import (DanglingBoundaryMarker, DegenerateCell,
                             DegreeMismatch, NonConformingPatch)
from patchext.families import (cube_star, half_star, random_boundary_patch,
                               random_interior_patch)
from patchext.fields import (BrokenScalarField, BrokenVectorField,
                             hdiv_data_of, jump, jump_data_of, normal_jump)
from patchext.patch import (ElementData, FaceData, build_patch,
                            check_compatibility_h1, check_compatibility_hdiv,
                            reorient_for_enumeration, shape_regularity,
                            solid_angle)
from patchext.spaces import (REF_TET, CellGeometry, ScalarSpace, face_project,
                             rtn_project, scalar_project)

REF_COORDS = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])


def test_cube_star_counts():
    p = cube_star()
    assert p.kind == "interior"
    assert p.cell_count == 12
    assert len(p.faces_of("interior")) == 18
    assert len(p.faces_of("external")) == 12
    assert abs(p.solid_angle - 4 * np.pi) < 1e-10 * 4 * np.pi


def test_single_tet_patch():
    p = build_patch([(0, 1, 2, 3)], REF_COORDS, 0, {(0, 1, 2): "D"})
    assert p.kind == "boundary"
    assert len(p.faces_of("interior")) == 0
    assert len(p.faces_of("external")) == 1
    assert len(p.faces_of("dirichlet")) + len(p.faces_of("neumann")) == 3


def test_two_cells_sharing_only_edge_rejected():
    coords = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
                       [0, -1, 0], [0, 0, -1.0]])
    with pytest.raises(NonConformingPatch):
        build_patch([(0, 1, 2, 3), (0, 1, 4, 5)], coords, 0)


def test_degenerate_cell_rejected():
    coords = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.3, 1e-16]])
    with pytest.raises(DegenerateCell):
        build_patch([(0, 1, 2, 3)], coords, 0)


def test_marker_errors():
    with pytest.raises(DanglingBoundaryMarker):
        # marker on the external face (does not contain the center)
        build_patch([(0, 1, 2, 3)], REF_COORDS, 0, {(1, 2, 3): "D"})
    with pytest.raises(DanglingBoundaryMarker):
        p = cube_star()
        build_patch(p.cells, p.coords, p.center,
                    {p.face_keys_of("interior")[0]: "D"})


def test_shape_regularity_regular_tet():
    # regular tetrahedron: insphere radius = edge * sqrt(6)/12, so
    # diameter / insphere-diameter = sqrt(6); checked against a brute-force
    # inscribed-ball maximization
    a = 1.0
    verts = np.array([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0],
                      [0.5, np.sqrt(3) / 6, np.sqrt(6) / 3]]) * a
    g = CellGeometry(verts)
    gamma = g.diameter / (2 * g.inradius)
    assert abs(gamma - np.sqrt(6)) < 1e-12

    # brute-force oracle: maximize distance-to-boundary over interior points
    rng = np.random.default_rng(0)
    frames = [np.delete(verts, i, axis=0) for i in range(4)]
    normals = []
    for i, tri in enumerate(frames):
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        n /= np.linalg.norm(n)
        if np.dot(n, verts[i] - tri[0]) > 0:
            n = -n
        normals.append((tri[0], n))
    # zooming random search for the inscribed-ball radius
    center = verts.mean(axis=0)
    width = 1.0
    best = -np.inf
    for _ in range(14):
        pts = center + width * (rng.random((4000, 3)) - 0.5)
        d = np.min(np.stack([-(pts - o) @ n for (o, n) in normals]), axis=0)
        i = int(np.argmax(d))
        if d[i] > best:
            best, center = d[i], pts[i]
        width *= 0.5
    assert abs(best - g.inradius) < 1e-3
    assert abs(g.inradius - np.sqrt(6) / 12) < 1e-13


def test_shape_regularity_similarity_invariance():
    p = cube_star()
    g1 = shape_regularity(p)
    R, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((3, 3)))
    coords = 2.7 * p.coords @ R.T + np.array([4.0, -1.0, 2.0])
    p2 = build_patch(p.cells, coords, p.center)
    assert abs(shape_regularity(p2) - g1) < 1e-10 * g1


def test_sliver_warning_scale():
    coords = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.3, 1.2e-8]])
    g = CellGeometry(coords)
    gamma = g.diameter / (2 * g.inradius)
    assert gamma > 1e7


def test_solid_angle_sum_boundary():
    hs = half_star()
    assert 0 < hs.solid_angle < 4 * np.pi
    assert abs(hs.solid_angle - 2 * np.pi) < 1e-10


def test_permutation_invariance():
    p = cube_star()
    rng = np.random.default_rng(5)
    perm = rng.permutation(p.cell_count)
    p2 = build_patch([p.cells[i] for i in perm], p.coords, p.center)
    assert {k: f.cls for k, f in p.faces.items()} == \
        {k: f.cls for k, f in p2.faces.items()}

    def products(pp):
        out = {}
        for (c, v), fan in pp.fans.items():
            for fk in fan.faces:
                f = pp.faces[fk]
                if f.cls != "interior":
                    continue
                for ci in f.cells:
                    out[((c, v), fk, tuple(sorted(pp.cells[ci])))] = \
                        fan.iota[fk] * f.jump_sign[ci]
        return out
    assert products(p) == products(p2)


def test_edge_fan_telescoping_identity():
    # oriented sum of jumps around each interior edge vanishes for the jumps
    # of any broken field (algebraic identity, to machine precision)
    p = cube_star()
    rng = np.random.default_rng(7)
    deg = 3
    v = BrokenScalarField([rng.standard_normal(ScalarSpace(3, deg).size)
                           for _ in range(p.cell_count)], deg)
    from patchext.spaces import face_values
    nq = deg + 2
    for (c, w), fan in p.fans.items():
        pts = p.edge_points((c, w), nq)
        acc = np.zeros(nq)
        scale = 1.0
        for fk in fan.faces:
            jv = face_values(p.faces[fk].frame, jump(p, v, fk),
                             p.face_coords2d(fk, pts), deg)
            scale = max(scale, np.abs(jv).max())
            acc += fan.iota[fk] * jv
        assert np.abs(acc).max() < 1e-12 * scale


def test_reorientation_and_telescoping():
    # after enumeration-based reorientation, interior normals point from the
    # earlier to the later cell, and the oriented edge sums still vanish
    p = cube_star()
    from patchext.shelling import enumerate_patch
    enum = enumerate_patch(p, seed=0)
    p2 = reorient_for_enumeration(p, enum.order)
    pos = {c: i for i, c in enumerate(enum.order)}
    for f in p2.faces_of("interior"):
        earlier = min(f.cells, key=lambda c: pos[c])
        assert f.jump_sign[earlier] == 1.0
    rng = np.random.default_rng(1)
    v = BrokenScalarField([rng.standard_normal(ScalarSpace(3, 2).size)
                           for _ in range(p.cell_count)], 2)
    from patchext.spaces import face_values
    for (c, w), fan in p2.fans.items():
        pts = p2.edge_points((c, w), 4)
        acc = np.zeros(4)
        scale = 1.0
        for fk in fan.faces:
            jv = face_values(p2.faces[fk].frame, jump(p2, v, fk),
                             p2.face_coords2d(fk, pts), 2)
            scale = max(scale, np.abs(jv).max())
            acc += fan.iota[fk] * jv
        assert np.abs(acc).max() < 1e-12 * scale


def test_single_normal_flip_leaves_iota_jump_invariant():
    # flipping one face normal (not the fan's reference face) flips both the
    # jump and that face's iota, so their product is unchanged
    from patchext.patch import FaceInfo, _ordered_fan

    p = cube_star()
    rng = np.random.default_rng(2)
    v = BrokenScalarField([rng.standard_normal(ScalarSpace(3, 2).size)
                           for _ in range(p.cell_count)], 2)
    (c, w), fan = next(iter(p.fans.items()))
    fk = fan.faces[1]          # not the fan's first (reference) face
    f = p.faces[fk]
    flipped = dict(p.faces)
    flipped[fk] = FaceInfo(fk, f.cls, -f.normal, f.cells,
                           {ci: -s for ci, s in f.jump_sign.items()}, f.frame)
    fan2 = _ordered_fan(flipped, p.cells, c, w, p.coords)
    p2 = type(p)(p.coords, p.cells, p.center, p.kind, flipped,
                 {(c, w): fan2}, p.solid_angle)
    a1 = fan.iota[fk] * jump(p, v, fk)
    a2 = fan2.iota[fk] * jump(p2, v, fk)
    assert np.abs(a1 - a2).max() < 1e-12


def test_compat_h1_jumps_of_broken_field_pass():
    p = cube_star()
    rng = np.random.default_rng(11)
    coeffs = []
    for ci, g in enumerate(p.geoms):
        cell = p.cells[ci]
        V = np.vstack([p.coords[list(cell)].T, np.ones(4)])
        k = cell.index(p.center)
        coef = np.linalg.solve(V.T, np.eye(4)[k])
        cs = rng.standard_normal(2)

        def f(x, coef=coef, cs=cs):
            lam = x @ coef[:3] + coef[3]
            return lam * (cs[0] + cs[1] * x[:, 0])
        coeffs.append(scalar_project(g, f, 2))
    v = BrokenScalarField(coeffs, 2)
    rep = check_compatibility_h1(p, jump_data_of(p, v))
    assert rep.passed


def test_compat_h1_single_face_fails_on_both_edges():
    p = cube_star()
    nf = ScalarSpace(2, 2).size
    vals = {f.key: np.zeros(nf) for f in p.faces_of("interior")}
    fkey = sorted(vals)[0]
    vals[fkey] = np.zeros(nf)
    vals[fkey][0] = 1.0
    rep = check_compatibility_h1(p, FaceData(vals, 2))
    assert not rep.passed
    bad_edges = [d[1] for d in rep.detail if d[0] == "edge" and d[2] > rep.tol]
    through_center = [e for e in bad_edges
                      if e[1] in fkey and e[0] == p.center]
    assert len(through_center) == 2


def test_compat_h1_zero_passes():
    p = cube_star()
    z = FaceData({f.key: np.zeros(ScalarSpace(2, 1).size)
                  for f in p.faces_of("interior")}, 1)
    assert check_compatibility_h1(p, z).passed


def test_compat_hdiv_divergence_theorem():
    p = cube_star()
    cells = {ci: scalar_project(g, lambda x: np.full(len(x), 3.0), 1)
             for ci, g in enumerate(p.geoms)}
    faces = {}
    for f in p.faces.values():
        if f.cls == "interior":
            faces[f.key] = np.zeros(ScalarSpace(2, 1).size)
        else:
            faces[f.key] = face_project(f.frame, lambda x, n=f.normal: x @ n, 1)
    rep = check_compatibility_hdiv(p, FaceData(faces, 1), ElementData(cells, 1))
    assert rep.passed


def test_compat_hdiv_single_external_face_fails_with_area_defect():
    p = cube_star()
    nf = ScalarSpace(2, 1).size
    faces = {f.key: np.zeros(nf) for f in p.faces.values()}
    cells = {ci: np.zeros(ScalarSpace(3, 1).size)
             for ci in range(p.cell_count)}
    ext = p.faces_of("external")[0]
    faces[ext.key] = face_project(ext.frame, lambda x: np.ones(len(x)), 1)
    rep = check_compatibility_hdiv(p, FaceData(faces, 1), ElementData(cells, 1))
    assert not rep.passed
    assert abs(rep.boundary_defect - ext.frame.area) < 1e-12


def test_compat_hdiv_waived_with_dirichlet():
    hs = half_star(marker="D")
    w = BrokenVectorField([rtn_project(g, lambda x: x, 1) for g in hs.geoms], 1)
    rf, rc = hdiv_data_of(hs, w)
    rf.values[hs.face_keys_of("external")[0]] += 3.0
    assert check_compatibility_hdiv(hs, rf, rc).passed


def test_degree_mismatch():
    p = cube_star()
    with pytest.raises(DegreeMismatch):
        FaceData({p.face_keys_of("interior")[0]: np.zeros(3)}, 2)
    with pytest.raises(DegreeMismatch):
        check_compatibility_h1(p, FaceData({}, 2))


@settings(max_examples=12, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_random_patches_validate(seed):
    p = random_interior_patch(seed)
    assert p.kind == "interior"
    assert 4 <= p.cell_count
    assert abs(p.solid_angle - 4 * np.pi) < 1e-9
    b = random_boundary_patch(seed, markers="mixed")
    assert b.kind == "boundary"


def test_solid_angle_formula():
    # full octant from the corner of the reference tetrahedron
    assert abs(solid_angle(np.zeros(3), np.eye(3)) - np.pi / 2) < 1e-13
