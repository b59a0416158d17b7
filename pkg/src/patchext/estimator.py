"""Equilibrated flux / potential reconstruction and guaranteed a posteriori
error bounds for the Laplace problem with polynomial data.

Given a broken approximation u_h, each mesh vertex contributes a conforming
potential piece (trace-constrained gradient minimization of the
hat-weighted data) and a normal-continuous, exactly equilibrated flux piece
(divergence-constrained L2 minimization); the sums s_h and sigma_h enter the
Prager-Synge-type bound

    ||grad(u - u_h)||^2 <= sum_K ( ||grad u_h + sigma_h||_K^2
                                   + ||grad(u_h - s_h)||_K^2 ).

The reconstruction degrees default to the theory's p'+1 (potential) and p'
(flux) and are raised only when the problem data itself has higher degree,
so that all constraints stay exactly representable.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (OrthogonalityViolated, PatchSolveFailed,
                     UnsupportedConfiguration)
from .fields import BrokenScalarField, BrokenVectorField
from .patch import build_patch
from .quadrature import segment_rule, tetrahedron_rule, triangle_rule
from .solver import CouplingRows, LocalRows, solve_constrained
from .spaces import (RTNSpace, ScalarSpace, cell_rtn_mass, cell_stiffness,
                     face_values, rtn_project, rtn_values, scalar_gradients,
                     scalar_moment, scalar_project, scalar_values,
                     trace_matrix)
from .extension import _signed_cells, _stab_vectors

ORTHO_TOL = 1e-8
AUDIT_TOL = 1e-9


@dataclass
class MeshProblem:
    """Laplace problem with piecewise polynomial data.

    f: cell -> P_{df} coefficients; u_D: Dirichlet face -> P_{dD} trace
    coefficients (continuous across Gamma_D); u_N: Neumann face -> P_{dN}
    coefficients of the prescribed inward flux -grad(u).n.
    """
    mesh: object
    f: dict
    f_degree: int
    u_D: dict
    uD_degree: int
    u_N: dict
    uN_degree: int
    p_prime: int

    def __post_init__(self):
        if self.p_prime < 1:
            raise ValueError("p' >= 1 required")
        gd = [k for k, v in self.mesh.markers.items() if v == "D"]
        if not gd:
            tot = 0.0
            m3 = scalar_moment(3, self.f_degree)
            for ci, c in self.f.items():
                from .spaces import CellGeometry
                g = CellGeometry(self.mesh.coords[list(self.mesh.cells[ci])])
                tot += g.amap.det * float(m3 @ c)
            m2 = scalar_moment(2, self.uN_degree)
            for key, c in self.u_N.items():
                from .spaces import FaceFrame
                tot -= FaceFrame(self.mesh.coords[list(key)]).double_area * \
                    float(m2 @ c)
            if abs(tot) > 1e-10 * max(1.0, abs(tot)) + 1e-10:
                raise ValueError(f"pure-Neumann data incompatible: {tot:.3e}")

    @property
    def p_potential(self):
        return max(self.p_prime + 1, self.uD_degree + 1)

    @property
    def p_flux(self):
        return max(self.p_prime, self.f_degree + 1, self.uN_degree + 1)


@dataclass
class Reconstruction:
    potential: list           # per mesh cell: P_{p_pot} coefficients
    potential_degree: int
    flux: list                # per mesh cell: RTN_{p_fl} coefficients
    flux_degree: int
    audits: dict = field(default_factory=dict)
    per_vertex: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# vertex patches and hat-weighted data
# --------------------------------------------------------------------------

_PATCH_CACHE = {}


def extract_patch(mesh, vertex):
    """Vertex star as a validated patch plus the cell-index mapping."""
    key = (id(mesh), vertex)
    if key in _PATCH_CACHE:
        return _PATCH_CACHE[key]
    star = mesh.vertex_cells[vertex]
    cells = [mesh.cells[ci] for ci in star]
    markers = {}
    for key, tag in mesh.markers.items():
        if vertex in key:
            markers[key] = tag
    patch = build_patch(cells, mesh.coords, vertex, markers)
    for local, (orig, ci) in enumerate(zip(patch.cells, star)):
        if orig != mesh.cells[ci]:
            raise PatchSolveFailed("patch extraction permuted a cell")
    if len(_PATCH_CACHE) > 4096:
        _PATCH_CACHE.clear()
    _PATCH_CACHE[key] = (patch, list(star))
    return patch, list(star)


def hat_coefficient(patch, ci):
    """Affine coefficients (a0, g) of the hat function on cell ci:
    psi(x) = a0 + g . x."""
    cell = patch.cells[ci]
    V = np.vstack([patch.coords[list(cell)].T, np.ones(4)])
    k = cell.index(patch.center)
    coef = np.linalg.solve(V.T, np.eye(4)[k])
    return coef[3], coef[:3]


def _hat_values(patch, ci, pts):
    a0, g = hat_coefficient(patch, ci)
    return a0 + pts @ g


def hat_weighted_data_potential(problem, vertex, u_h):
    """Patch data for the potential piece: tau = psi_a u_h, interior jumps
    psi_a [u_h], zero on external faces, psi_a (u_h - u_D) on Dirichlet
    faces, and the Dirichlet trace psi_a u_D."""
    mesh = problem.mesh
    p = problem.p_potential
    pp = problem.p_prime
    patch, star = extract_patch(mesh, vertex)
    rule = tetrahedron_rule(2 * p + 2)

    tau = []
    for ci, mi in enumerate(star):
        g = patch.geoms[ci]
        pts = g.from_reference(rule.points)

        def f(x, ci=ci, mi=mi):
            return _hat_values(patch, ci, x) * scalar_values(
                g, u_h.coeffs[mi], x, pp)
        tau.append(scalar_project(g, f, p))
    tau = BrokenScalarField(tau, p)

    frule = triangle_rule(2 * p + 2)
    Vf = ScalarSpace(2, p).tabulate(frule.points, grads=False)
    rvals = {}
    uaD = {}
    for fobj in patch.faces.values():
        pts3 = fobj.frame.to3d(frule.points)
        if fobj.cls == "interior":
            jump_vals = np.zeros(len(pts3))
            for ci in fobj.cells:
                mi = star[ci]
                jump_vals += fobj.jump_sign[ci] * scalar_values(
                    patch.geoms[ci], u_h.coeffs[mi], pts3, pp)
            hat = _hat_values(patch, fobj.cells[0], pts3)
            rvals[fobj.key] = np.einsum("q,qa,q->a", frule.weights, Vf,
                                        hat * jump_vals)
        elif fobj.cls == "dirichlet":
            ci = fobj.cells[0]
            vals = scalar_values(patch.geoms[ci], u_h.coeffs[star[ci]],
                                 pts3, pp)
            E = np.column_stack([fobj.frame.e1, fobj.frame.e2])
            xy, *_ = np.linalg.lstsq(E, (pts3 - fobj.frame.origin).T, rcond=None)
            ud = face_values(fobj.frame, problem.u_D[fobj.key], xy.T,
                             problem.uD_degree)
            hat = _hat_values(patch, ci, pts3)
            rvals[fobj.key] = np.einsum("q,qa,q->a", frule.weights, Vf,
                                        hat * (vals - ud))
            uaD[fobj.key] = np.einsum("q,qa,q->a", frule.weights, Vf, hat * ud)
        elif fobj.cls == "external":
            rvals[fobj.key] = np.zeros(Vf.shape[1])
    from .patch import FaceData
    return patch, star, tau, FaceData(rvals, p), FaceData(uaD, p) if uaD else None


def hat_weighted_data_flux(problem, vertex, u_h):
    """Patch data for the flux piece: tau = psi_a grad u_h, divergences
    psi_a (f + lap u_h), interior normal jumps psi_a [grad u_h].n, zero on
    external faces, psi_a (grad u_h . n + u_N) on Neumann faces."""
    mesh = problem.mesh
    p = problem.p_flux
    pp = problem.p_prime
    patch, star = extract_patch(mesh, vertex)

    tau = []
    rk = {}
    for ci, mi in enumerate(star):
        g = patch.geoms[ci]

        def fv(x, g=g, mi=mi, ci=ci):
            return _hat_values(patch, ci, x)[:, None] * scalar_gradients(
                g, u_h.coeffs[mi], x, pp)
        tau.append(rtn_project(g, fv, p))

        from .spaces import scalar_derivative_maps
        D = scalar_derivative_maps(pp)
        lap = np.zeros(ScalarSpace(3, pp).size)
        Binv = g.amap.Binv
        # laplacian of u_h|K: grad = Binv^T gradref; lap = sum_d d_d(grad_d)
        C = Binv @ Binv.T
        for d1 in range(3):
            for d2 in range(3):
                lap += C[d1, d2] * (D[d1] @ (D[d2] @ u_h.coeffs[mi]))

        def fk(x, g=g, ci=ci, lap=lap, mi=mi):
            fval = scalar_values(g, problem.f[mi], x, problem.f_degree)
            lv = scalar_values(g, lap, x, pp)
            return _hat_values(patch, ci, x) * (fval + lv)
        rk[ci] = scalar_project(g, fk, p)

    tau = BrokenVectorField(tau, p)
    frule = triangle_rule(2 * p + 2)
    Vf = ScalarSpace(2, p).tabulate(frule.points, grads=False)
    rvals = {}
    sigmaN = {}
    for fobj in patch.faces.values():
        if fobj.cls == "dirichlet":
            continue
        pts3 = fobj.frame.to3d(frule.points)
        if fobj.cls == "interior":
            jn = np.zeros(len(pts3))
            for ci in fobj.cells:
                gi = scalar_gradients(patch.geoms[ci], u_h.coeffs[star[ci]],
                                      pts3, pp)
                jn += fobj.jump_sign[ci] * (gi @ fobj.normal)
            hat = _hat_values(patch, fobj.cells[0], pts3)
            rvals[fobj.key] = np.einsum("q,qa,q->a", frule.weights, Vf, hat * jn)
        elif fobj.cls == "external":
            rvals[fobj.key] = np.zeros(Vf.shape[1])
        else:  # neumann
            ci = fobj.cells[0]
            gi = scalar_gradients(patch.geoms[ci], u_h.coeffs[star[ci]],
                                  pts3, pp)
            E = np.column_stack([fobj.frame.e1, fobj.frame.e2])
            xy, *_ = np.linalg.lstsq(E, (pts3 - fobj.frame.origin).T, rcond=None)
            un = face_values(fobj.frame, problem.u_N[fobj.key], xy.T,
                             problem.uN_degree)
            hat = _hat_values(patch, ci, pts3)
            rvals[fobj.key] = np.einsum("q,qa,q->a", frule.weights, Vf,
                                        hat * (gi @ fobj.normal + un))
            sigmaN[fobj.key] = np.einsum("q,qa,q->a", frule.weights, Vf,
                                         hat * un)
    from .patch import ElementData, FaceData
    return (patch, star, tau, FaceData(rvals, p), ElementData(rk, p),
            FaceData(sigmaN, p) if sigmaN else None)


def check_hat_orthogonality(problem, u_h, vertex):
    """(grad u_h, grad psi_a) - (f, psi_a) + (u_N, psi_a) over the patch."""
    mesh = problem.mesh
    pp = problem.p_prime
    patch, star = extract_patch(mesh, vertex)
    total = 0.0
    rule = tetrahedron_rule(2 * pp + 2)
    for ci, mi in enumerate(star):
        g = patch.geoms[ci]
        pts = g.from_reference(rule.points)
        w = rule.weights * g.amap.det
        _, gpsi = hat_coefficient(patch, ci)
        gu = scalar_gradients(g, u_h.coeffs[mi], pts, pp)
        total += np.sum(w * (gu @ gpsi))
        fv = scalar_values(g, problem.f[mi], pts, problem.f_degree)
        total -= np.sum(w * fv * _hat_values(patch, ci, pts))
    frule = triangle_rule(2 * pp + 4)
    for fobj in patch.faces_of("neumann"):
        pts3 = fobj.frame.to3d(frule.points)
        un = face_values(fobj.frame, problem.u_N[fobj.key], frule.points,
                         problem.uN_degree)
        hat = _hat_values(patch, fobj.cells[0], pts3)
        total += fobj.frame.double_area * np.sum(frule.weights * un * hat)
    return float(total)


# --------------------------------------------------------------------------
# per-vertex solves and the global reconstruction
# --------------------------------------------------------------------------

def _potential_piece(problem, vertex, u_h):
    patch, star, tau, r, uaD = hat_weighted_data_potential(problem, vertex, u_h)
    has_d = bool(patch.faces_of("dirichlet"))
    has_n = bool(patch.faces_of("neumann"))
    if has_d and has_n:
        raise UnsupportedConfiguration(
            f"vertex {vertex} touches both Dirichlet and Neumann faces "
            "(H1 theory needs a pure vertex)")
    p = tau.degree
    nf = ScalarSpace(2, p).size
    blocks = [cell_stiffness(g, p) for g in patch.geoms]
    rows = []
    for fobj in patch.faces_of("interior"):
        cp, cm = _signed_cells(fobj)
        rows.append(CouplingRows((cp, cm),
                                 (patch.trace_mat(cp, fobj.key, p),
                                  -patch.trace_mat(cm, fobj.key, p)),
                                 np.zeros(nf), "jump"))
    for fobj in patch.faces_of("external"):
        rows.append(LocalRows(fobj.cells[0],
                              patch.trace_mat(fobj.cells[0], fobj.key, p),
                              np.zeros(nf), "ext"))
    for fobj in patch.faces_of("dirichlet"):
        rows.append(LocalRows(fobj.cells[0],
                              patch.trace_mat(fobj.cells[0], fobj.key, p),
                              uaD.values[fobj.key], "dirichlet"))
    bvec = [blocks[ci] @ tau.coeffs[ci] for ci in range(patch.cell_count)]
    res = solve_constrained(blocks, bvec, rows,
                            stabilize_mean=_stab_vectors(patch, p))
    if res.constraint_inf > 1e-8:
        raise PatchSolveFailed(
            f"potential patch at vertex {vertex}: residual {res.constraint_inf:.2e}")
    return patch, star, BrokenScalarField(res.x, p), tau


def _flux_piece(problem, vertex, u_h):
    patch, star, tau, rf, rk, sigmaN = hat_weighted_data_flux(problem, vertex,
                                                              u_h)
    p = tau.degree
    nf = ScalarSpace(2, p).size
    blocks = [cell_rtn_mass(g, p) for g in patch.geoms]
    rows = []
    for ci in range(patch.cell_count):
        want = patch.geoms[ci].amap.det * rk.values[ci] \
            - RTNSpace(p).div_map @ tau.coeffs[ci]
        rows.append(LocalRows(ci, RTNSpace(p).div_map, want, "div"))
    for fobj in patch.faces.values():
        if fobj.cls == "dirichlet":
            continue
        if fobj.cls == "interior":
            cp, cm = _signed_cells(fobj)
            rows.append(CouplingRows((cp, cm),
                                     (patch.ntrace_mat(cp, fobj.key, p),
                                      -patch.ntrace_mat(cm, fobj.key, p)),
                                     np.zeros(nf), "njump"))
        elif fobj.cls == "external":
            rows.append(LocalRows(fobj.cells[0],
                                  patch.ntrace_mat(fobj.cells[0], fobj.key, p),
                                  np.zeros(nf), "ntrace"))
        else:
            rows.append(LocalRows(fobj.cells[0],
                                  patch.ntrace_mat(fobj.cells[0], fobj.key, p),
                                  sigmaN.values[fobj.key], "ntraceN"))
    bvec = [-(blocks[ci] @ tau.coeffs[ci]) for ci in range(patch.cell_count)]
    res = solve_constrained(blocks, bvec, rows)
    if res.constraint_inf > 1e-8:
        raise PatchSolveFailed(
            f"flux patch at vertex {vertex}: residual {res.constraint_inf:.2e}")
    return patch, star, BrokenVectorField(res.x, p)


def _needs_orthogonality(mesh, vertex):
    keys = [k for k in mesh.markers if vertex in k]
    if not keys:
        return True                       # interior vertex
    return all(mesh.markers[k] == "N" for k in keys)


def reconstruct(problem, u_h, workers=1):
    """Potential s_h and equilibrated flux sigma_h by per-vertex solves."""
    mesh = problem.mesh
    bad = []
    for v in range(mesh.n_vertices):
        if v not in mesh.vertex_cells:
            continue
        if _needs_orthogonality(mesh, v):
            if abs(check_hat_orthogonality(problem, u_h, v)) > ORTHO_TOL:
                bad.append(v)
    if bad:
        raise OrthogonalityViolated(
            f"hat orthogonality fails at vertices {bad}; flux equilibration "
            "is infeasible for this u_h", vertices=bad)

    p_pot = problem.p_potential
    p_fl = problem.p_flux
    s_h = [np.zeros(ScalarSpace(3, p_pot).size) for _ in range(mesh.n_cells)]
    sigma_h = [np.zeros(RTNSpace(p_fl).size) for _ in range(mesh.n_cells)]
    per_vertex = {}

    verts = [v for v in range(mesh.n_vertices) if v in mesh.vertex_cells]

    def work(v):
        patch, star, s_a, tau = _potential_piece(problem, v, u_h)
        _, star2, sig_a = _flux_piece(problem, v, u_h)
        return v, star, s_a, sig_a

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(work, verts))
    else:
        results = [work(v) for v in verts]
    for v, star, s_a, sig_a in results:
        for ci, mi in enumerate(star):
            s_h[mi] += s_a.coeffs[ci]
            sigma_h[mi] += sig_a.coeffs[ci]
        per_vertex[v] = (star, s_a, sig_a)

    rec = Reconstruction(s_h, p_pot, sigma_h, p_fl, per_vertex=per_vertex)
    rec.audits = audit_reconstruction(problem, rec)
    return rec


def audit_reconstruction(problem, rec):
    """Divergence, normal-continuity, trace-continuity, and boundary audits."""
    from .spaces import CellGeometry, FaceFrame, rtn_div_coeffs
    from .element import embed_cell

    mesh = problem.mesh
    p_fl = rec.flux_degree
    p_pot = rec.potential_degree
    geoms = [CellGeometry(mesh.coords[list(c)]) for c in mesh.cells]

    div_res = 0.0
    for ci in range(mesh.n_cells):
        dc = rtn_div_coeffs(geoms[ci], rec.flux[ci], p_fl)
        want = embed_cell(problem.f[ci], problem.f_degree, p_fl)
        div_res = max(div_res, float(np.abs(dc - want).max()))

    njump = 0.0
    sjump = 0.0
    frule = triangle_rule(2 * max(p_fl + 1, p_pot) + 2)
    for key in mesh.interior_faces():
        frame = FaceFrame(mesh.coords[list(key)])
        pts3 = frame.to3d(frule.points)
        jn = np.zeros(len(pts3))
        js = np.zeros(len(pts3))
        for ci in mesh.face_owners[key]:
            out = 1.0 if np.dot(frame.normal,
                                frame.coords.mean(axis=0)
                                - geoms[ci].verts.mean(axis=0)) > 0 else -1.0
            jn += out * (rtn_values(geoms[ci], rec.flux[ci], pts3, p_fl)
                         @ frame.normal)
            js += out * scalar_values(geoms[ci], rec.potential[ci], pts3, p_pot)
        njump = max(njump, float(np.abs(jn).max()))
        sjump = max(sjump, float(np.abs(js).max()))

    dtrace = 0.0
    ntrace = 0.0
    for key, tag in mesh.markers.items():
        frame = FaceFrame(mesh.coords[list(key)])
        pts3 = frame.to3d(frule.points)
        ci = mesh.face_owners[key][0]
        if tag == "D":
            sv = scalar_values(geoms[ci], rec.potential[ci], pts3, p_pot)
            ud = face_values(frame, problem.u_D[key], frule.points,
                             problem.uD_degree)
            dtrace = max(dtrace, float(np.abs(sv - ud).max()))
        else:
            out = 1.0 if np.dot(frame.normal, frame.coords.mean(axis=0)
                                - geoms[ci].verts.mean(axis=0)) > 0 else -1.0
            wn = out * (rtn_values(geoms[ci], rec.flux[ci], pts3, p_fl)
                        @ frame.normal)
            un = face_values(frame, problem.u_N[key], frule.points,
                             problem.uN_degree)
            ntrace = max(ntrace, float(np.abs(wn - un).max()))
    return {"div": div_res, "flux_normal_jump": njump,
            "potential_jump": sjump, "dirichlet_trace": dtrace,
            "neumann_trace": ntrace}


# --------------------------------------------------------------------------
# error bound and efficiency
# --------------------------------------------------------------------------

@dataclass
class ErrorBound:
    eta: float
    eta_K: np.ndarray
    flux_K: np.ndarray
    potential_K: np.ndarray
    jump_term_uh: float       # sum_F h^-1 |Pi0 [u_h]|^2 (+ Dirichlet part)
    eta_augmented: float


def error_bound(problem, u_h, rec):
    """Guaranteed bound: eta^2 = sum_K (flux_K^2 + potential_K^2); the
    augmented variant adds the face-mean jump terms on both sides."""
    from .spaces import CellGeometry, FaceFrame

    mesh = problem.mesh
    pp = problem.p_prime
    p_fl, p_pot = rec.flux_degree, rec.potential_degree
    geoms = [CellGeometry(mesh.coords[list(c)]) for c in mesh.cells]
    rule = tetrahedron_rule(2 * max(p_fl + 1, p_pot) + 2)

    nK = mesh.n_cells
    flux_K = np.zeros(nK)
    pot_K = np.zeros(nK)
    for ci in range(nK):
        g = geoms[ci]
        pts = g.from_reference(rule.points)
        w = rule.weights * g.amap.det
        gu = scalar_gradients(g, u_h.coeffs[ci], pts, pp)
        sg = rtn_values(g, rec.flux[ci], pts, p_fl)
        flux_K[ci] = np.sqrt(np.sum(w * np.sum((gu + sg) ** 2, axis=1)))
        gs = scalar_gradients(g, rec.potential[ci], pts, p_pot)
        pot_K[ci] = np.sqrt(np.sum(w * np.sum((gu - gs) ** 2, axis=1)))
    eta_K = np.sqrt(flux_K ** 2 + pot_K ** 2)
    eta = float(np.sqrt(np.sum(eta_K ** 2)))

    jump_term = 0.0
    frule = triangle_rule(2 * pp + 2)
    for key in mesh.interior_faces():
        frame = FaceFrame(mesh.coords[list(key)])
        pts3 = frame.to3d(frule.points)
        js = np.zeros(len(pts3))
        for ci in mesh.face_owners[key]:
            out = 1.0 if np.dot(frame.normal, frame.coords.mean(axis=0)
                                - geoms[ci].verts.mean(axis=0)) > 0 else -1.0
            js += out * scalar_values(geoms[ci], u_h.coeffs[ci], pts3, pp)
        # Pi_F^0 g = 2 sum w g (reference weights sum to 1/2)
        pi0 = 2 * np.sum(frule.weights * js)
        jump_term += (pi0 ** 2) * frame.area / frame.diameter
    for key, tag in mesh.markers.items():
        if tag != "D":
            continue
        frame = FaceFrame(mesh.coords[list(key)])
        pts3 = frame.to3d(frule.points)
        ci = mesh.face_owners[key][0]
        sv = scalar_values(geoms[ci], u_h.coeffs[ci], pts3, pp)
        ud = face_values(frame, problem.u_D[key], frule.points,
                         problem.uD_degree)
        pi0 = 2 * np.sum(frule.weights * (sv - ud))
        jump_term += (pi0 ** 2) * frame.area / frame.diameter

    return ErrorBound(eta, eta_K, flux_K, pot_K, jump_term,
                      float(np.sqrt(eta ** 2 + jump_term)))


def broken_error(problem, u_h, grad_exact, degree_exact):
    """||grad_T (u - u_h)||_Omega and per-cell/per-patch contributions."""
    from .spaces import CellGeometry

    mesh = problem.mesh
    pp = problem.p_prime
    geoms = [CellGeometry(mesh.coords[list(c)]) for c in mesh.cells]
    rule = tetrahedron_rule(2 * max(pp, degree_exact) + 2)
    err_K = np.zeros(mesh.n_cells)
    for ci in range(mesh.n_cells):
        g = geoms[ci]
        pts = g.from_reference(rule.points)
        w = rule.weights * g.amap.det
        gu = scalar_gradients(g, u_h.coeffs[ci], pts, pp)
        ge = grad_exact(pts)
        err_K[ci] = np.sqrt(np.sum(w * np.sum((ge - gu) ** 2, axis=1)))
    return float(np.sqrt(np.sum(err_K ** 2))), err_K


@dataclass
class EfficiencyReport:
    effectivity: float
    flux_ratios: np.ndarray
    potential_ratios: np.ndarray
    jump_identity_defect: float
    error: float
    eta: float


def efficiency_report(problem, u_h, rec, exact_grad, degree_exact,
                      exact_value=None):
    """Per-element efficiency ratios and the global effectivity index."""
    from .spaces import CellGeometry, FaceFrame

    mesh = problem.mesh
    bound = error_bound(problem, u_h, rec)
    err, err_K = broken_error(problem, u_h, exact_grad, degree_exact)

    # patch error norms
    patch_err = {}
    for v in mesh.vertex_cells:
        patch_err[v] = float(np.sqrt(sum(err_K[ci] ** 2
                                         for ci in mesh.vertex_cells[v])))
    nK = mesh.n_cells
    flux_r = np.full(nK, np.nan)
    pot_r = np.full(nK, np.nan)
    pp = problem.p_prime
    geoms = [CellGeometry(mesh.coords[list(c)]) for c in mesh.cells]
    frule = triangle_rule(2 * max(pp, degree_exact) + 2)

    # face-mean jump terms of the exact error (for the potential denominator)
    face_pi0 = {}
    for key in mesh.interior_faces():
        frame = FaceFrame(mesh.coords[list(key)])
        pts3 = frame.to3d(frule.points)
        js = np.zeros(len(pts3))
        for ci in mesh.face_owners[key]:
            out = 1.0 if np.dot(frame.normal, frame.coords.mean(axis=0)
                                - geoms[ci].verts.mean(axis=0)) > 0 else -1.0
            js += out * scalar_values(geoms[ci], u_h.coeffs[ci], pts3, pp)
        pi0 = 2 * np.sum(frule.weights * js)   # mean over ref triangle * 2
        face_pi0[key] = abs(pi0) * np.sqrt(frame.area) / np.sqrt(frame.diameter)
    for key, tag in mesh.markers.items():
        if tag != "D":
            continue
        frame = FaceFrame(mesh.coords[list(key)])
        pts3 = frame.to3d(frule.points)
        ci = mesh.face_owners[key][0]
        sv = scalar_values(geoms[ci], u_h.coeffs[ci], pts3, pp)
        ud = face_values(frame, problem.u_D[key], frule.points,
                         problem.uD_degree)
        pi0 = 2 * np.sum(frule.weights * (sv - ud))
        face_pi0[key] = abs(pi0) * np.sqrt(frame.area) / np.sqrt(frame.diameter)

    vert_jump = {}
    for v in mesh.vertex_cells:
        acc = 0.0
        for key in face_pi0:
            if v in key:
                acc += face_pi0[key] ** 2
        vert_jump[v] = np.sqrt(acc)

    for ci in range(nK):
        den_f = sum(patch_err[v] for v in mesh.cells[ci])
        den_p = sum(patch_err[v] + vert_jump[v] for v in mesh.cells[ci])
        if den_f > 1e-14:
            flux_r[ci] = bound.flux_K[ci] / den_f
        if den_p > 1e-14:
            pot_r[ci] = bound.potential_K[ci] / den_p

    # jump identity: |Pi0 [u_h]|_F == |Pi0 [u - u_h]|_F (u is continuous)
    jdef = 0.0
    if exact_value is not None:
        for key in mesh.interior_faces():
            frame = FaceFrame(mesh.coords[list(key)])
            pts3 = frame.to3d(frule.points)
            js = np.zeros(len(pts3))
            je = np.zeros(len(pts3))
            for ci in mesh.face_owners[key]:
                out = 1.0 if np.dot(frame.normal, frame.coords.mean(axis=0)
                                    - geoms[ci].verts.mean(axis=0)) > 0 else -1.0
                uv = scalar_values(geoms[ci], u_h.coeffs[ci], pts3, pp)
                js += out * uv
                je += out * (exact_value(pts3) - uv)
            jdef = max(jdef, abs(abs(2 * np.sum(frule.weights * js))
                                 - abs(2 * np.sum(frule.weights * je))))

    eff = bound.eta / err if err > 0 else np.nan
    return EfficiencyReport(eff, flux_r, pot_r, jdef, err, bound.eta)
