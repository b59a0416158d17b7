"""Manufactured Laplace problems on the unit cube and admissible broken
approximations for estimator verification.

The built-in exact solution is the degree-4 polynomial

    u = x^2 y^2 - y^2 z^2 + x y z + x^2 - y^2,     f = -lap u = 2 z^2 - 2 x^2,

with matching Dirichlet traces.  Broken approximations are produced by
elementwise L2 projection followed by a conforming piecewise-affine
correction that restores the hat-function orthogonality at the vertices
where flux equilibration requires it (a raw elementwise projection violates
that necessary condition, making the equilibration problem infeasible).
"""

import numpy as np

from .estimator import (MeshProblem, check_hat_orthogonality, extract_patch,
                        hat_coefficient)
from .fields import BrokenScalarField
from .meshio import kuhn_mesh
from .spaces import CellGeometry, FaceFrame, face_project, scalar_project


def exact_value(pts):
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    return x**2 * y**2 - y**2 * z**2 + x * y * z + x**2 - y**2


def exact_gradient(pts):
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    return np.column_stack([
        2 * x * y**2 + y * z + 2 * x,
        2 * x**2 * y - 2 * y * z**2 + x * z - 2 * y,
        -2 * y**2 * z + x * y,
    ])


def exact_rhs(pts):
    x, z = pts[:, 0], pts[:, 2]
    return 2 * z**2 - 2 * x**2


EXACT_DEGREE = 4


def cube_problem(n, p_prime, marker_fn=None):
    """MeshProblem on the n^3 Kuhn mesh of the unit cube with the built-in
    manufactured solution (all-Dirichlet by default)."""
    mesh = kuhn_mesh(n, marker_fn)
    geoms = [CellGeometry(mesh.coords[list(c)]) for c in mesh.cells]
    f = {ci: scalar_project(geoms[ci], exact_rhs, 2) for ci in range(mesh.n_cells)}
    u_D = {}
    u_N = {}
    for key, tag in mesh.markers.items():
        frame = FaceFrame(mesh.coords[list(key)])
        if tag == "D":
            u_D[key] = face_project(frame, exact_value, EXACT_DEGREE)
        else:
            ci = mesh.face_owners[key][0]
            out = 1.0 if np.dot(frame.normal, frame.coords.mean(axis=0)
                                - geoms[ci].verts.mean(axis=0)) > 0 else -1.0
            u_N[key] = face_project(
                frame, lambda x: -(exact_gradient(x) @ (out * frame.normal)),
                EXACT_DEGREE - 1)
    return MeshProblem(mesh, f, 2, u_D, EXACT_DEGREE, u_N, EXACT_DEGREE - 1,
                       p_prime)


def projection_uh(problem, value=exact_value):
    """Raw elementwise L2 projection of a function onto broken P_{p'}."""
    mesh = problem.mesh
    geoms = [CellGeometry(mesh.coords[list(c)]) for c in mesh.cells]
    coeffs = [scalar_project(geoms[ci], value, problem.p_prime,
                             extra_degree=EXACT_DEGREE)
              for ci in range(mesh.n_cells)]
    return BrokenScalarField(coeffs, problem.p_prime)


def admissible_uh(problem, value=exact_value):
    """Elementwise projection plus the conforming piecewise-affine correction
    enforcing hat orthogonality at interior / pure-Neumann vertices."""
    u_h = projection_uh(problem, value)
    mesh = problem.mesh

    need = []
    for v in range(mesh.n_vertices):
        if v not in mesh.vertex_cells:
            continue
        keys = [k for k in mesh.markers if v in k]
        if not keys or all(mesh.markers[k] == "N" for k in keys):
            need.append(v)
    if not need:
        return u_h

    defect = np.array([check_hat_orthogonality(problem, u_h, v) for v in need])
    idx = {v: i for i, v in enumerate(need)}
    G = np.zeros((len(need), len(need)))
    hats = {}
    for v in need:
        patch, star = extract_patch(mesh, v)
        hats[v] = (patch, star)
        for ci, mi in enumerate(star):
            g = patch.geoms[ci]
            _, gpsi_v = hat_coefficient(patch, ci)
            for w in patch.cells[ci]:
                if w not in idx:
                    continue
                k = patch.cells[ci].index(w)
                V = np.vstack([patch.coords[list(patch.cells[ci])].T, np.ones(4)])
                coef = np.linalg.solve(V.T, np.eye(4)[k])
                G[idx[v], idx[w]] += g.volume * float(gpsi_v @ coef[:3])
    c, *_ = np.linalg.lstsq(G, -defect, rcond=None)

    for v in need:
        patch, star = hats[v]
        for ci, mi in enumerate(star):
            g = patch.geoms[ci]
            a0, gpsi = hat_coefficient(patch, ci)

            def psi(x, a0=a0, gpsi=gpsi):
                return a0 + x @ gpsi
            u_h.coeffs[mi] = u_h.coeffs[mi] + c[idx[v]] * scalar_project(
                g, psi, problem.p_prime)
    return u_h
