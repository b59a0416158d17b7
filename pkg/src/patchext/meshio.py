"""Global tetrahedral meshes, the ASCII mesh format, and mesh generators.

Format (``tetmesh v1``)::

    tetmesh v1
    <nv>
    x y z            (one vertex per line, full-precision decimals)
    ...
    <nc>
    i j k l          (one cell per line, 0-based vertex indices)
    ...
    D i j k          (boundary face markers, one per line)
    N i j k

Every boundary face (owned by exactly one cell) must carry a marker;
markers on non-boundary faces are rejected.
"""

import numpy as np

from .errors import NonManifold, ParseError, UnmarkedBoundaryFace


class Mesh:
    """Conforming tetrahedral mesh with D/N boundary markers."""

    def __init__(self, coords, cells, markers):
        self.coords = np.asarray(coords, dtype=float)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ParseError("vertex table must be (nv, 3)")
        if not np.all(np.isfinite(self.coords)):
            raise ParseError("non-finite vertex coordinates")
        oriented = []
        for cell in cells:
            cell = tuple(int(i) for i in cell)
            V = self.coords[list(cell)]
            if np.linalg.det((V[1:] - V[0]).T) < 0:
                cell = (cell[0], cell[1], cell[3], cell[2])
            oriented.append(cell)
        self.cells = tuple(oriented)
        self.markers = {tuple(sorted(k)): v for k, v in markers.items()}

        owners = {}
        for ci, cell in enumerate(self.cells):
            for loc in range(4):
                key = tuple(sorted(set(cell) - {cell[loc]}))
                owners.setdefault(key, []).append(ci)
        for key, own in owners.items():
            if len(own) > 2:
                raise NonManifold(f"face {key} shared by {len(own)} cells")
        self.face_owners = owners
        self.boundary_faces = {k for k, o in owners.items() if len(o) == 1}
        for key in self.boundary_faces:
            if key not in self.markers:
                raise UnmarkedBoundaryFace(f"boundary face {key} unmarked")
        for key, v in self.markers.items():
            if key not in self.boundary_faces:
                raise ParseError(f"marker on non-boundary face {key}")
            if v not in ("D", "N"):
                raise ParseError(f"marker {v!r} on face {key}")

        self.vertex_cells = {}
        for ci, cell in enumerate(self.cells):
            for v in cell:
                self.vertex_cells.setdefault(v, []).append(ci)

    @property
    def n_vertices(self):
        return self.coords.shape[0]

    @property
    def n_cells(self):
        return len(self.cells)

    def interior_faces(self):
        return [k for k, o in self.face_owners.items() if len(o) == 2]


def read_mesh(path):
    with open(path) as fh:
        lines = fh.read().splitlines()

    def fail(i, msg):
        raise ParseError(msg, line=i + 1)

    if not lines or lines[0].strip() != "tetmesh v1":
        fail(0, "expected header 'tetmesh v1'")
    i = 1
    try:
        nv = int(lines[i].strip())
    except Exception:
        fail(i, "expected vertex count")
    coords = []
    for k in range(nv):
        i += 1
        parts = lines[i].split()
        if len(parts) != 3:
            fail(i, f"expected 3 coordinates, got {len(parts)}")
        try:
            coords.append([float(x) for x in parts])
        except ValueError:
            fail(i, "bad coordinate")
    i += 1
    try:
        nc = int(lines[i].strip())
    except Exception:
        fail(i, "expected cell count")
    cells = []
    for k in range(nc):
        i += 1
        parts = lines[i].split()
        if len(parts) != 4:
            fail(i, f"expected 4 vertex indices, got {len(parts)}")
        try:
            cell = tuple(int(x) for x in parts)
        except ValueError:
            fail(i, "bad vertex index")
        if any(v < 0 or v >= nv for v in cell):
            fail(i, "vertex index out of range")
        cells.append(cell)
    markers = {}
    for j in range(i + 1, len(lines)):
        line = lines[j].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] not in ("D", "N"):
            fail(j, f"expected 'D i j k' or 'N i j k', got {line!r}")
        try:
            key = tuple(sorted(int(x) for x in parts[1:]))
        except ValueError:
            fail(j, "bad face index")
        markers[key] = parts[0]
    return Mesh(coords, cells, markers)


def write_mesh(mesh, path):
    out = ["tetmesh v1", str(mesh.n_vertices)]
    for x in mesh.coords:
        out.append(" ".join(repr(float(c)) for c in x))
    out.append(str(mesh.n_cells))
    for c in mesh.cells:
        out.append(" ".join(str(v) for v in c))
    for key in sorted(mesh.markers):
        out.append(f"{mesh.markers[key]} {key[0]} {key[1]} {key[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def kuhn_mesh(n, marker_fn=None):
    """Kuhn (Freudenthal) subdivision of the unit cube into 6 n^3 tetrahedra.

    marker_fn(face centroid) -> "D" | "N"; all-Dirichlet by default.
    """
    import itertools

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    coords = np.array([[i, j, k] for i in range(n + 1)
                       for j in range(n + 1) for k in range(n + 1)],
                      dtype=float) / n
    cells = []
    E = np.eye(3, dtype=int)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                base = np.array([i, j, k])
                for perm in itertools.permutations(range(3)):
                    vs = [base.copy()]
                    for d in perm:
                        vs.append(vs[-1] + E[d])
                    cells.append(tuple(vid(*v) for v in vs))
    mesh = Mesh(coords, cells, _mark_all(coords, cells, marker_fn))
    return mesh


def _mark_all(coords, cells, marker_fn):
    owners = {}
    for cell in cells:
        for loc in range(4):
            key = tuple(sorted(set(cell) - {cell[loc]}))
            owners.setdefault(key, []).append(cell)
    markers = {}
    for key, own in owners.items():
        if len(own) == 1:
            if marker_fn is None:
                markers[key] = "D"
            else:
                markers[key] = marker_fn(np.asarray(coords)[list(key)].mean(axis=0))
    return markers


# --------------------------------------------------------------------------
# coefficient files and problem bundles
# --------------------------------------------------------------------------

def write_cell_coeffs(path, values, ncells, ncoeffs):
    out = ["cellcoeffs v1", f"{ncells} {ncoeffs}"]
    for ci in range(ncells):
        row = values.get(ci) if isinstance(values, dict) else values[ci]
        if row is None:
            row = np.zeros(ncoeffs)
        out.append(" ".join(repr(float(x)) for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_cell_coeffs(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "cellcoeffs v1":
        raise ParseError("expected header 'cellcoeffs v1'", line=1)
    try:
        nc, nk = (int(x) for x in lines[1].split())
    except Exception:
        raise ParseError("expected '<ncells> <ncoeffs>'", line=2)
    vals = {}
    for ci in range(nc):
        parts = lines[2 + ci].split()
        if len(parts) != nk:
            raise ParseError(f"expected {nk} coefficients", line=3 + ci)
        vals[ci] = np.array([float(x) for x in parts])
    return vals


def write_face_coeffs(path, values, ncoeffs):
    out = ["facecoeffs v1", f"{len(values)} {ncoeffs}"]
    for key in sorted(values):
        row = values[key]
        out.append(f"{key[0]} {key[1]} {key[2]} "
                   + " ".join(repr(float(x)) for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_face_coeffs(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "facecoeffs v1":
        raise ParseError("expected header 'facecoeffs v1'", line=1)
    try:
        nf, nk = (int(x) for x in lines[1].split())
    except Exception:
        raise ParseError("expected '<nfaces> <ncoeffs>'", line=2)
    vals = {}
    for i in range(nf):
        parts = lines[2 + i].split()
        if len(parts) != 3 + nk:
            raise ParseError(f"expected 3 indices + {nk} coefficients",
                             line=3 + i)
        key = tuple(sorted(int(x) for x in parts[:3]))
        vals[key] = np.array([float(x) for x in parts[3:]])
    return vals


def write_bundle(dirpath, problem, u_h, exact_monomials=None):
    """Write a problem bundle (mesh, data, u_h, manifest) to a directory."""
    import json
    import os

    from ._backend import tet_mode_count, tri_mode_count

    os.makedirs(dirpath, exist_ok=True)
    write_mesh(problem.mesh, os.path.join(dirpath, "mesh.tet"))
    write_cell_coeffs(os.path.join(dirpath, "f.coeffs"), problem.f,
                      problem.mesh.n_cells, tet_mode_count(problem.f_degree))
    write_face_coeffs(os.path.join(dirpath, "uD.coeffs"), problem.u_D,
                      tri_mode_count(problem.uD_degree))
    write_face_coeffs(os.path.join(dirpath, "uN.coeffs"), problem.u_N,
                      tri_mode_count(problem.uN_degree))
    write_cell_coeffs(os.path.join(dirpath, "uh.coeffs"), u_h.coeffs,
                      problem.mesh.n_cells, tet_mode_count(u_h.degree))
    manifest = {
        "schema": "patchext-bundle v1",
        "mesh": "mesh.tet",
        "p_prime": problem.p_prime,
        "f": "f.coeffs", "f_degree": problem.f_degree,
        "u_D": "uD.coeffs", "uD_degree": problem.uD_degree,
        "u_N": "uN.coeffs", "uN_degree": problem.uN_degree,
        "u_h": "uh.coeffs",
    }
    if exact_monomials is not None:
        manifest["exact"] = {"monomials": [list(map(float, m))
                                           for m in exact_monomials]}
    with open(os.path.join(dirpath, "bundle.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def read_bundle(dirpath):
    """Load a problem bundle; returns (MeshProblem, u_h, exact or None)."""
    import json
    import os

    from .estimator import MeshProblem
    from .fields import BrokenScalarField

    with open(os.path.join(dirpath, "bundle.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != "patchext-bundle v1":
        raise ParseError("unknown bundle schema")
    mesh = read_mesh(os.path.join(dirpath, manifest["mesh"]))
    f = read_cell_coeffs(os.path.join(dirpath, manifest["f"]))
    u_D = read_face_coeffs(os.path.join(dirpath, manifest["u_D"]))
    u_N = read_face_coeffs(os.path.join(dirpath, manifest["u_N"]))
    uh_vals = read_cell_coeffs(os.path.join(dirpath, manifest["u_h"]))
    problem = MeshProblem(mesh, f, manifest["f_degree"], u_D,
                          manifest["uD_degree"], u_N, manifest["uN_degree"],
                          manifest["p_prime"])
    u_h = BrokenScalarField([uh_vals[ci] for ci in range(mesh.n_cells)],
                            manifest["p_prime"])
    exact = None
    if "exact" in manifest:
        mono = [tuple(m) for m in manifest["exact"]["monomials"]]

        def value(pts, mono=mono):
            out = np.zeros(len(pts))
            for (a, b, c, coef) in mono:
                out += coef * pts[:, 0]**a * pts[:, 1]**b * pts[:, 2]**c
            return out

        def grad(pts, mono=mono):
            out = np.zeros((len(pts), 3))
            for (a, b, c, coef) in mono:
                if a:
                    out[:, 0] += coef * a * pts[:, 0]**(a - 1) * pts[:, 1]**b * pts[:, 2]**c
                if b:
                    out[:, 1] += coef * b * pts[:, 0]**a * pts[:, 1]**(b - 1) * pts[:, 2]**c
                if c:
                    out[:, 2] += coef * c * pts[:, 0]**a * pts[:, 1]**b * pts[:, 2]**(c - 1)
            return out
        degree = int(max(a + b + c for (a, b, c, _) in mono))
        exact = {"value": value, "grad": grad, "degree": degree}
    return problem, u_h, exact
