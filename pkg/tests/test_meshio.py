"""Mesh file format, coefficient files, and problem bundles."""

import os

import numpy as np
import pytest

from patchext.errors import NonManifold, ParseError, UnmarkedBoundaryFace
from patchext.meshio import (Mesh, kuhn_mesh, read_bundle, read_cell_coeffs,
                             read_face_coeffs, read_mesh, write_bundle,
                             write_cell_coeffs, write_face_coeffs, write_mesh)


def test_kuhn_mesh_counts():
    m = kuhn_mesh(1)
    assert m.n_cells == 6 and m.n_vertices == 8
    assert len(m.boundary_faces) == 12
    m2 = kuhn_mesh(2)
    assert m2.n_cells == 48 and m2.n_vertices == 27
    vol = 0.0
    for c in m2.cells:
        V = m2.coords[list(c)]
        vol += abs(np.linalg.det((V[1:] - V[0]).T)) / 6
    assert abs(vol - 1.0) < 1e-13


def test_single_tet_file(tmp_path):
    path = tmp_path / "one.tet"
    path.write_text("tetmesh v1\n4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n1\n0 1 2 3\n"
                    "D 0 1 2\nD 0 1 3\nD 0 2 3\nD 1 2 3\n")
    m = read_mesh(str(path))
    assert m.n_cells == 1 and len(m.markers) == 4


def test_roundtrip_bitwise(tmp_path):
    m = kuhn_mesh(2)
    p1 = tmp_path / "a.tet"
    p2 = tmp_path / "b.tet"
    write_mesh(m, str(p1))
    write_mesh(read_mesh(str(p1)), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_parse_error_line_numbers(tmp_path):
    path = tmp_path / "bad.tet"
    path.write_text("tetmesh v1\n4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n1\n"
                    "0 1 2 3 4\n")
    with pytest.raises(ParseError) as exc:
        read_mesh(str(path))
    assert exc.value.line == 8
    path.write_text("not a mesh\n")
    with pytest.raises(ParseError):
        read_mesh(str(path))


def test_unmarked_boundary_face(tmp_path):
    path = tmp_path / "um.tet"
    path.write_text("tetmesh v1\n4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n1\n0 1 2 3\n"
                    "D 0 1 2\n")
    with pytest.raises(UnmarkedBoundaryFace):
        read_mesh(str(path))


def test_non_manifold():
    coords = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
                       [0, 0, -1], [0, -1, 0.2]])
    cells = [(0, 1, 2, 3), (0, 1, 2, 4), (0, 1, 2, 5)]
    with pytest.raises(NonManifold):
        Mesh(coords, cells, {})


def test_marker_on_interior_face():
    m = kuhn_mesh(1)
    markers = dict(m.markers)
    interior = m.interior_faces()[0]
    markers[interior] = "D"
    with pytest.raises(ParseError):
        Mesh(m.coords, m.cells, markers)


def test_coeff_files_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    vals = {0: rng.standard_normal(4), 1: rng.standard_normal(4)}
    p = tmp_path / "c.coeffs"
    write_cell_coeffs(str(p), vals, 2, 4)
    back = read_cell_coeffs(str(p))
    for k in vals:
        assert np.array_equal(vals[k], back[k])
    fvals = {(0, 1, 2): rng.standard_normal(3), (1, 2, 3): rng.standard_normal(3)}
    pf = tmp_path / "f.coeffs"
    write_face_coeffs(str(pf), fvals, 3)
    backf = read_face_coeffs(str(pf))
    for k in fvals:
        assert np.array_equal(fvals[k], backf[k])


def test_bundle_roundtrip(tmp_path):
    from patchext.manufactured import admissible_uh, cube_problem
    prob = cube_problem(1, 1)
    uh = admissible_uh(prob)
    d = tmp_path / "bundle"
    write_bundle(str(d), prob, uh, exact_monomials=[(2, 0, 0, 1.0)])
    prob2, uh2, exact = read_bundle(str(d))
    assert prob2.p_prime == 1
    assert prob2.mesh.n_cells == prob.mesh.n_cells
    for a, b in zip(uh.coeffs, uh2.coeffs):
        assert np.array_equal(a, b)
    pts = np.array([[0.5, 0.25, 0.75]])
    assert abs(exact["value"](pts)[0] - 0.25) < 1e-15
    assert np.abs(exact["grad"](pts)[0] - [1.0, 0, 0]).max() < 1e-15
    assert exact["degree"] == 2
