"""Deterministic and randomized patch generators used by tests and the CLI."""

import numpy as np
from scipy.spatial import ConvexHull, Delaunay

from .errors import DegenerateCell, NonConformingPatch
from .patch import build_patch


def _star_from_surface(points, tris, markers=None):
    """Patch obtained by coning surface triangles to the origin."""
    coords = np.vstack([[0.0, 0.0, 0.0], points])
    cells = [(0, a + 1, b + 1, c + 1) for a, b, c in tris]
    mk = None
    if markers:
        mk = {tuple(sorted(i + 1 for i in k)): v for k, v in markers.items()}
    return build_patch(cells, coords, 0, mk)


def cube_star():
    """12-tet interior patch: faces of [-1,1]^3 split in two, coned to 0."""
    v = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                  for sz in (-1, 1)], dtype=float)
    hull = ConvexHull(v)
    tris = [tuple(s) for s in hull.simplices]
    return _star_from_surface(v, tris)


def distorted_star(stretch=3.1):
    """Cube star squeezed anisotropically; default tuned to gamma ~ 10."""
    patch = cube_star()
    coords = patch.coords @ np.diag([1.0, 1.0, 1.0 / stretch])
    return build_patch(patch.cells, coords, patch.center)


def half_star(n_ring=8, marker="D", apex=1.0):
    """Boundary patch: ring of n_ring points at z=0 plus an apex, coned to
    the origin; the flat faces at z=0 carry the given marker."""
    ang = 2 * np.pi * np.arange(n_ring) / n_ring
    ring = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(n_ring)])
    pts = np.vstack([ring, [0.0, 0.0, apex]])
    top = n_ring
    tris = [(i, (i + 1) % n_ring, top) for i in range(n_ring)]
    markers = {(i, (i + 1) % n_ring, "a"): marker for i in range(n_ring)}
    coords = np.vstack([[0.0, 0.0, 0.0], pts])
    cells = [(0, a + 1, b + 1, c + 1) for a, b, c in tris]
    mk = {tuple(sorted((0, i + 1, (i + 1) % n_ring + 1))): marker
          for i in range(n_ring)}
    return build_patch(cells, coords, 0, mk)


def random_interior_patch(seed, n_cells=None, radial_jitter=0.25):
    """Random star patch: hull triangulation of random sphere points, vertices
    then perturbed radially.  Retries until the patch validates."""
    rng = np.random.default_rng(seed)
    for _ in range(50):
        n = int(n_cells) if n_cells else int(rng.integers(5, 31))
        # hull of n' points in general position has 2n'-4 facets
        npts = max(4, (n + 4) // 2 + int(rng.integers(0, 2)))
        pts = rng.standard_normal((npts, 3))
        nrm = np.linalg.norm(pts, axis=1)
        if nrm.min() < 1e-6:
            continue
        pts /= nrm[:, None]
        try:
            hull = ConvexHull(pts)
        except Exception:
            continue
        if len(hull.vertices) != npts:
            continue
        radii = 1.0 + radial_jitter * (2 * rng.random(npts) - 1)
        try:
            return _star_from_surface(pts * radii[:, None],
                                      [tuple(s) for s in hull.simplices])
        except (NonConformingPatch, DegenerateCell):
            continue
    raise RuntimeError(f"failed to generate a random interior patch (seed={seed})")


def random_boundary_patch(seed, markers="D", n_ring=None, n_top=None,
                          warp=0.0):
    """Random half-star: convex ring at z=0 plus upper points over the ring's
    interior, Delaunay cap triangulation, coned to the origin.

    markers: "D", "N", or "mixed" (alternating D/N on the flat faces).
    warp: lift the ring points off the z=0 plane by +-warp (makes the
    flattening map nontrivial).
    """
    rng = np.random.default_rng(seed)
    for _ in range(80):
        m = int(n_ring) if n_ring else int(rng.integers(4, 9))
        k = int(n_top) if n_top is not None else int(rng.integers(1, 5))
        ang = np.sort(rng.random(m)) * 2 * np.pi
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        if gaps.min() < 0.35 or gaps.max() > 0.75 * np.pi:
            continue
        r_ring = 0.85 + 0.3 * rng.random()
        ring = np.column_stack([r_ring * np.cos(ang), r_ring * np.sin(ang),
                                np.zeros(m)])
        # keep top projections inside the ring polygon's inscribed circle
        inradius = r_ring * np.cos(gaps.max() / 2)
        top = np.empty((k, 3))
        tr = 0.7 * inradius * np.sqrt(rng.random(k))
        ta = 2 * np.pi * rng.random(k)
        top[:, 0] = tr * np.cos(ta)
        top[:, 1] = tr * np.sin(ta)
        top[:, 2] = 0.6 + 0.6 * rng.random(k)
        if k > 1 and min(np.linalg.norm(top[i, :2] - top[j, :2])
                         for i in range(k) for j in range(i)) < 0.25 * r_ring:
            continue
        pts = np.vstack([ring, top])

        try:
            dt = Delaunay(pts[:, :2])
        except Exception:
            continue
        tris = [tuple(s) for s in dt.simplices]
        # every cap triangle needs a non-ring vertex (theorem hypothesis on
        # external faces); ring-only triangles also break the fan structure
        if any(all(i < m for i in t) for t in tris):
            continue
        if warp:
            pts = pts.copy()
            pts[:m, 2] = warp * (2 * rng.random(m) - 1)

        coords = np.vstack([[0.0, 0.0, 0.0], pts])
        cells = [(0, a + 1, b + 1, c + 1) for a, b, c in tris]
        mk = {}
        for i in range(m):
            j = (i + 1) % m
            tag = markers if markers in ("D", "N") else ("D" if i % 2 == 0 else "N")
            mk[tuple(sorted((0, i + 1, j + 1)))] = tag
        try:
            patch = build_patch(cells, coords, 0, mk)
        except (NonConformingPatch, DegenerateCell):
            continue
        if patch.kind != "boundary":
            continue
        return patch
    raise RuntimeError(f"failed to generate a random boundary patch (seed={seed})")


def named_family(name):
    """Patch families used by the stability sweep CLI."""
    if name == "regular":
        return cube_star()
    if name == "distorted":
        return distorted_star()
    if name == "half":
        return half_star()
    raise ValueError(f"unknown patch family {name!r} "
                     "(expected regular|distorted|half)")


# --------------------------------------------------------------------------
# fixed data families (stability sweeps) and random compatible data
# --------------------------------------------------------------------------

def center_barycentric(patch, ci):
    """Affine function = 1 at the patch center, 0 on the opposite face of
    cell ci (the hat function restricted to the cell)."""
    cell = patch.cells[ci]
    V = np.vstack([patch.coords[list(cell)].T, np.ones(4)])
    k = cell.index(patch.center)
    coef = np.linalg.solve(V.T, np.eye(4)[k])

    def lam(x):
        return x @ coef[:3] + coef[3]
    return lam


def fixed_h1_data(patch, p, seed=0):
    """Deterministic compatible jump data: jumps (and Dirichlet traces) of a
    broken field c_K * lambda_a * ell^(min(p,3)-1) vanishing on the external
    boundary."""
    from .fields import BrokenScalarField, jump, boundary_trace
    from .patch import FaceData
    from .spaces import scalar_project

    rng = np.random.default_rng(seed)
    q = min(p, 3) - 1
    coeffs = []
    for ci, g in enumerate(patch.geoms):
        lam = center_barycentric(patch, ci)
        c = 0.5 + ci / max(1, patch.cell_count - 1) + 0.05 * rng.standard_normal()

        def f(x, lam=lam, c=c):
            ell = 0.3 * x[:, 0] - 0.7 * x[:, 1] + 0.5 * x[:, 2] + 0.4
            return c * lam(x) * ell ** q
        coeffs.append(scalar_project(g, f, p))
    v = BrokenScalarField(coeffs, p)
    vals = {f.key: jump(patch, v, f.key) for f in patch.faces_of("interior")}
    for f in patch.faces_of("dirichlet"):
        vals[f.key] = boundary_trace(patch, v, f.key)
    return FaceData(vals, p)


def fixed_hdiv_data(patch, p, seed=0):
    """Deterministic compatible flux data realized by a broken RTN field
    c_K * (x - a) * ell^min(p,2)."""
    from .fields import BrokenVectorField, hdiv_data_of
    from .spaces import rtn_project

    rng = np.random.default_rng(seed)
    q = min(p, 2)
    a = patch.center_point
    coeffs = []
    for ci, g in enumerate(patch.geoms):
        c = 0.5 + ci / max(1, patch.cell_count - 1) + 0.05 * rng.standard_normal()

        def f(x, c=c):
            ell = (0.2 * x[:, 0] + 0.5 * x[:, 1] - 0.4 * x[:, 2] + 0.6) ** q
            return c * (x - a) * ell[:, None]
        coeffs.append(rtn_project(g, f, p))
    w = BrokenVectorField(coeffs, p)
    return hdiv_data_of(patch, w)


def random_h1_data(patch, p, seed):
    """Random compatible jump data (jumps of a random broken field that
    vanishes on the external boundary)."""
    from .fields import BrokenScalarField, jump, boundary_trace
    from .patch import FaceData
    from .spaces import ScalarSpace, scalar_project

    rng = np.random.default_rng(seed)
    coeffs = []
    for ci, g in enumerate(patch.geoms):
        lam = center_barycentric(patch, ci)
        cs = rng.standard_normal(4)

        def f(x, lam=lam, cs=cs):
            base = cs[0] + cs[1] * x[:, 0] + cs[2] * x[:, 1] + cs[3] * x[:, 2]
            return lam(x) * base ** max(0, min(p - 1, 2))
        coeffs.append(scalar_project(g, f, p))
    v = BrokenScalarField(coeffs, p)
    vals = {f.key: jump(patch, v, f.key) for f in patch.faces_of("interior")}
    for f in patch.faces_of("dirichlet"):
        vals[f.key] = boundary_trace(patch, v, f.key)
    return FaceData(vals, p)


def random_hdiv_data(patch, p, seed):
    """Random compatible flux data (realized by a random broken RTN field)."""
    from .fields import BrokenVectorField, hdiv_data_of
    from .spaces import RTNSpace

    rng = np.random.default_rng(seed)
    w = BrokenVectorField([rng.standard_normal(RTNSpace(p).size)
                           for _ in range(patch.cell_count)], p)
    return hdiv_data_of(patch, w)
