"""Patch-level broken extensions: sequential sweep constructions, global
discrete minimizers (via the shifted conforming formulation or a direct
multiplier solve), the conforming residual lifting, and stability-ratio
certification against overkill-degree proxies.

Sign bookkeeping is orientation-free: every jump row is written with the
face's stored jump_sign, so no global reorientation of normals is needed
(the enumeration-based reorientation exists separately for inspection).
"""

from dataclasses import dataclass, field

import numpy as np

from .element import (ElementH1Problem, ElementHdivProblem, embed_cell,
                      embed_face, h1_extend_element, hdiv_extend_element)
from .errors import IncompatibleData
from .fields import (BrokenScalarField, BrokenVectorField, boundary_trace,
                     boundary_normal_trace, jump, normal_jump)
from .patch import (COMPAT_TOL, ElementData, FaceData, check_compatibility_h1,
                    check_compatibility_hdiv, shape_regularity)
from .shelling import enumerate_patch
from .solver import CouplingRows, LocalRows, solve_constrained
from .spaces import (RTNSpace, ScalarSpace, cell_rtn_mass, cell_stiffness,
                     scalar_moment)

AUDIT_TOL = 1e-9


@dataclass
class MinimizationResult:
    field: object                 # BrokenScalarField | BrokenVectorField
    energy: float
    constraint_residuals: dict
    diagnostics: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# constraint-row assembly
# --------------------------------------------------------------------------

def _signed_cells(f):
    """(plus cell, minus cell) of an interior face by jump sign."""
    ca, cb = f.cells
    return (ca, cb) if f.jump_sign[ca] == 1.0 else (cb, ca)


def h1_rows(patch, p, r=None, dirichlet=None, tag_prefix=""):
    """Jump rows on interior faces, zero-trace rows on external faces, and
    optional Dirichlet trace rows; r/dirichlet may be None for homogeneous."""
    nf = ScalarSpace(2, p).size
    rows = []
    for f in patch.faces_of("interior"):
        cp, cm = _signed_cells(f)
        rhs = np.zeros(nf)
        if r is not None and f.key in r.values:
            rhs = embed_face(r.values[f.key], r.degree, p)
        rows.append(CouplingRows((cp, cm),
                                 (patch.trace_mat(cp, f.key, p),
                                  -patch.trace_mat(cm, f.key, p)),
                                 rhs, tag_prefix + "jump"))
    for f in patch.faces_of("external"):
        rows.append(LocalRows(f.cells[0], patch.trace_mat(f.cells[0], f.key, p),
                              np.zeros(nf), tag_prefix + "ext"))
    for f in patch.faces_of("dirichlet"):
        if dirichlet is None:
            continue
        rhs = np.zeros(nf)
        if f.key in dirichlet.values:
            rhs = embed_face(dirichlet.values[f.key], dirichlet.degree, p)
        rows.append(LocalRows(f.cells[0], patch.trace_mat(f.cells[0], f.key, p),
                              rhs, tag_prefix + "dirichlet"))
    return rows


def hdiv_rows(patch, p, r_faces=None, r_cells=None, tag_prefix=""):
    """Divergence rows per cell, normal-jump rows on interior faces, and
    normal-trace rows on external/Neumann faces (Dirichlet faces are free)."""
    nf = ScalarSpace(2, p).size
    nc = ScalarSpace(3, p).size
    rows = []
    for ci in range(patch.cell_count):
        rhs = np.zeros(nc)
        if r_cells is not None and ci in r_cells.values:
            rhs = patch.geoms[ci].amap.det * embed_cell(
                r_cells.values[ci], r_cells.degree, p)
        rows.append(LocalRows(ci, RTNSpace(p).div_map, rhs, tag_prefix + "div"))
    for f in patch.faces.values():
        if f.cls == "dirichlet":
            continue
        rhs = np.zeros(nf)
        if r_faces is not None and f.key in r_faces.values:
            rhs = embed_face(r_faces.values[f.key], r_faces.degree, p)
        if f.cls == "interior":
            cp, cm = _signed_cells(f)
            rows.append(CouplingRows((cp, cm),
                                     (patch.ntrace_mat(cp, f.key, p),
                                      -patch.ntrace_mat(cm, f.key, p)),
                                     rhs, tag_prefix + "njump"))
        else:
            rows.append(LocalRows(f.cells[0],
                                  patch.ntrace_mat(f.cells[0], f.key, p),
                                  rhs, tag_prefix + "ntrace"))
    return rows


def mean_row(patch, p, tag="mean"):
    mats = tuple(patch.geoms[ci].amap.det * scalar_moment(3, p)[None, :]
                 for ci in range(patch.cell_count))
    return CouplingRows(tuple(range(patch.cell_count)), mats,
                        np.zeros(1), tag)


def _stab_vectors(patch, p):
    return [g.amap.det * scalar_moment(3, p) for g in patch.geoms]


# --------------------------------------------------------------------------
# residual audits
# --------------------------------------------------------------------------

def audit_h1(patch, v, r, dirichlet=None):
    """Sup-norms of constraint residuals of a broken scalar field."""
    out = {"jump": 0.0, "ext": 0.0, "dirichlet": 0.0}
    for f in patch.faces_of("interior"):
        got = jump(patch, v, f.key)
        want = embed_face(r.values[f.key], r.degree, v.degree) \
            if r is not None and f.key in r.values else 0.0
        out["jump"] = max(out["jump"], float(np.abs(got - want).max()))
    for f in patch.faces_of("external"):
        out["ext"] = max(out["ext"], float(np.abs(
            boundary_trace(patch, v, f.key)).max()))
    for f in patch.faces_of("dirichlet"):
        if dirichlet is None:
            continue
        got = boundary_trace(patch, v, f.key)
        want = embed_face(dirichlet.values[f.key], dirichlet.degree, v.degree) \
            if f.key in dirichlet.values else 0.0
        out["dirichlet"] = max(out["dirichlet"], float(np.abs(got - want).max()))
    return out


def audit_hdiv(patch, w, r_faces, r_cells):
    out = {"njump": 0.0, "ntrace": 0.0, "div": 0.0}
    for f in patch.faces.values():
        if f.cls == "dirichlet":
            continue
        want = embed_face(r_faces.values[f.key], r_faces.degree, w.degree) \
            if r_faces is not None and f.key in r_faces.values else 0.0
        if f.cls == "interior":
            got = normal_jump(patch, w, f.key)
            out["njump"] = max(out["njump"], float(np.abs(got - want).max()))
        else:
            got = boundary_normal_trace(patch, w, f.key)
            out["ntrace"] = max(out["ntrace"], float(np.abs(got - want).max()))
    for ci in range(patch.cell_count):
        got = w.div_coeffs(patch, ci)
        want = embed_cell(r_cells.values[ci], r_cells.degree, w.degree) \
            if r_cells is not None and ci in r_cells.values else 0.0
        out["div"] = max(out["div"], float(np.abs(got - want).max()))
    return out


# --------------------------------------------------------------------------
# sweep constructions
# --------------------------------------------------------------------------

def sweep_construct_h1(patch, enumeration, r, p=None):
    """Cell-by-cell construction of a broken field with the prescribed jumps:
    each cell solves the elementwise minimizer with Dirichlet data on its
    external face and on the interior faces shared with earlier cells."""
    p = r.degree if p is None else p
    w = BrokenScalarField.zeros(patch.cell_count, p)
    for i, ci in enumerate(enumeration.order):
        ext = patch.external_face_of(ci)
        nf = ScalarSpace(2, p).size
        data = [(ext.frame, np.zeros(nf))]
        for fkey in enumeration.sharp[i]:
            f = patch.faces[fkey]
            cj = next(c for c in f.cells if c != ci)
            sj = f.jump_sign[cj]
            g = patch.trace_mat(cj, fkey, p) @ w.coeffs[cj] \
                - sj * embed_face(r.values[fkey], r.degree, p)
            data.append((f.frame, g))
        try:
            prob = ElementH1Problem(patch.geoms[ci], data, p)
            w.coeffs[ci] = h1_extend_element(prob, p).coeffs
        except Exception as exc:
            raise IncompatibleData(
                f"sweep cell {ci}: Dirichlet data assembly failed "
                f"(violated edge compatibility?): {exc}") from exc
    return w


def sweep_construct_hdiv(patch, enumeration, r_faces, r_cells, p=None):
    """Cell-by-cell construction of a broken RTN field with prescribed
    divergence, normal jumps, and boundary normal traces."""
    p = r_faces.degree if p is None else p
    w = BrokenVectorField.zeros(patch.cell_count, p)
    nf = ScalarSpace(2, p).size
    last = enumeration.order[-1]
    for i, ci in enumerate(enumeration.order):
        ext = patch.external_face_of(ci)
        rk = r_cells.values.get(ci, np.zeros(ScalarSpace(3, r_cells.degree).size))
        neu = [(ext.frame, embed_face(r_faces.values[ext.key],
                                      r_faces.degree, p))]
        for fkey in enumeration.sharp[i]:
            f = patch.faces[fkey]
            cj = next(c for c in f.cells if c != ci)
            sj = f.jump_sign[cj]
            g = embed_face(r_faces.values[fkey], r_faces.degree, p) \
                - sj * (patch.ntrace_mat(cj, fkey, p) @ w.coeffs[cj])
            neu.append((f.frame, g))
        prob = ElementHdivProblem(patch.geoms[ci], neu,
                                  embed_cell(rk, r_cells.degree, p), p)
        if ci == last and len(neu) == 4:
            defect = prob.compatibility_defect()
            scale = max(1.0, abs(patch.geoms[ci].amap.det))
            if abs(defect) > 100 * COMPAT_TOL * scale:
                raise IncompatibleData(
                    f"last-cell Neumann defect {defect:.3e}", defect=defect)
        w.coeffs[ci] = hdiv_extend_element(prob, p).coeffs
    return w


# --------------------------------------------------------------------------
# global minimizers
# --------------------------------------------------------------------------

def global_min_h1(patch, r, p=None, method="shifted", enumeration=None,
                  tau=None, check=True):
    """Discrete minimizer of the broken gradient norm under prescribed jumps
    and zero external trace (interior-patch setting).

    method "shifted": build an admissible tau by the sweep, then solve the
    conforming problem and subtract.  method "direct": one multiplier solve
    over the broken space.
    """
    p = r.degree if p is None else p
    if check:
        rep = check_compatibility_h1(patch, r)
        if not rep.passed:
            raise IncompatibleData(
                f"jump data violates compatibility: {rep.boundary_defect:.2e} "
                f"/ {rep.edge_defect:.2e}")
    blocks = [cell_stiffness(g, p) for g in patch.geoms]
    if method == "direct":
        rows = h1_rows(patch, p, r)
        res = solve_constrained(blocks, [np.zeros(B.shape[0]) for B in blocks],
                                rows, stabilize_mean=_stab_vectors(patch, p))
        v = BrokenScalarField(res.x, p)
        diag = dict(res.diagnostics)
    else:
        if tau is None:
            enumeration = enumeration or enumerate_patch(patch)
            tau = sweep_construct_h1(patch, enumeration, r, p)
        rows = h1_rows(patch, p)
        b = [blocks[ci] @ tau.coeffs[ci] for ci in range(patch.cell_count)]
        res = solve_constrained(blocks, b, rows,
                                stabilize_mean=_stab_vectors(patch, p))
        v = BrokenScalarField([tau.coeffs[ci] - res.x[ci]
                               for ci in range(patch.cell_count)], p)
        diag = dict(res.diagnostics, shifted=True)
    audit = audit_h1(patch, v, r)
    diag["solver_residuals"] = res.residuals
    return MinimizationResult(v, v.grad_norm(patch), audit, diag)


def global_min_hdiv(patch, r_faces, r_cells, p=None, method="shifted",
                    enumeration=None, tau=None, check=True):
    """Discrete minimizer of the L2 norm in broken RTN under prescribed
    divergence, normal jumps, and boundary normal traces."""
    p = r_faces.degree if p is None else p
    if check:
        rep = check_compatibility_hdiv(patch, r_faces, r_cells)
        if not rep.passed:
            raise IncompatibleData(
                f"data violates the divergence compatibility: defect "
                f"{rep.boundary_defect:.2e}")
    blocks = [cell_rtn_mass(g, p) for g in patch.geoms]
    if method == "direct":
        rows = hdiv_rows(patch, p, r_faces, r_cells)
        res = solve_constrained(blocks, [np.zeros(B.shape[0]) for B in blocks],
                                rows)
        w = BrokenVectorField(res.x, p)
        diag = dict(res.diagnostics)
    else:
        if tau is None:
            enumeration = enumeration or enumerate_patch(patch)
            tau = sweep_construct_hdiv(patch, enumeration, r_faces, r_cells, p)
        # sigma in H0(div): div sigma = r_K - div tau, minimizing |tau+sigma|
        rows = []
        nc = ScalarSpace(3, p).size
        for ci in range(patch.cell_count):
            want = patch.geoms[ci].amap.det * embed_cell(
                r_cells.values.get(ci, np.zeros(ScalarSpace(3, r_cells.degree).size)),
                r_cells.degree, p)
            rows.append(LocalRows(ci, RTNSpace(p).div_map,
                                  want - RTNSpace(p).div_map @ tau.coeffs[ci],
                                  "div"))
        for f in patch.faces.values():
            if f.cls == "dirichlet":
                continue
            nf = ScalarSpace(2, p).size
            if f.cls == "interior":
                cp, cm = _signed_cells(f)
                rows.append(CouplingRows((cp, cm),
                                         (patch.ntrace_mat(cp, f.key, p),
                                          -patch.ntrace_mat(cm, f.key, p)),
                                         np.zeros(nf), "njump"))
            else:
                rows.append(LocalRows(f.cells[0],
                                      patch.ntrace_mat(f.cells[0], f.key, p),
                                      np.zeros(nf), "ntrace"))
        b = [-(blocks[ci] @ tau.coeffs[ci]) for ci in range(patch.cell_count)]
        res = solve_constrained(blocks, b, rows)
        w = BrokenVectorField([tau.coeffs[ci] + res.x[ci]
                               for ci in range(patch.cell_count)], p)
        diag = dict(res.diagnostics, shifted=True)
    audit = audit_hdiv(patch, w, r_faces, r_cells)
    diag["solver_residuals"] = res.residuals
    return MinimizationResult(w, w.l2_norm(patch), audit, diag)


# --------------------------------------------------------------------------
# residual lifting
# --------------------------------------------------------------------------

def lift_residual_h1(patch, r_faces, r_cells, degree_lift):
    """Conforming lifting r^a of the data functional
    v -> sum_K (r_K, v)_K - sum_F (r_F, v)_F over the mean-zero (or
    Dirichlet-trace) conforming space; returns the lifting and its energy."""
    p = degree_lift
    has_dirichlet = bool(patch.faces_of("dirichlet"))
    if not has_dirichlet:
        rep = check_compatibility_hdiv(patch, r_faces, r_cells)
        if not rep.passed:
            raise IncompatibleData(
                f"functional not mean-free: defect {rep.boundary_defect:.2e}")

    blocks = [cell_stiffness(g, p) for g in patch.geoms]
    b = [np.zeros(B.shape[0]) for B in blocks]
    for ci in range(patch.cell_count):
        if ci in r_cells.values:
            b[ci] += patch.geoms[ci].amap.det * embed_cell(
                r_cells.values[ci], r_cells.degree, p)
    for f in patch.faces.values():
        if f.key not in r_faces.values:
            continue
        rF = embed_face(r_faces.values[f.key], r_faces.degree, p)
        share = 0.5 if f.cls == "interior" else 1.0
        for ci in f.cells:
            b[ci] -= share * f.frame.double_area * (
                patch.trace_mat(ci, f.key, p).T @ rF)

    rows = h1_rows(patch, p)           # zero jumps; zero external trace? no:
    # the lifting space has no external-trace constraint; keep jumps only
    rows = [g for g in rows if g.tag == "jump"]
    if has_dirichlet:
        for f in patch.faces_of("dirichlet"):
            rows.append(LocalRows(f.cells[0],
                                  patch.trace_mat(f.cells[0], f.key, p),
                                  np.zeros(ScalarSpace(2, p).size), "dirichlet"))
    else:
        rows.append(mean_row(patch, p))
    res = solve_constrained(blocks, b, rows,
                            stabilize_mean=_stab_vectors(patch, p))
    v = BrokenScalarField(res.x, p)
    audit = {"jump": audit_h1(patch, v, None)["jump"],
             "solver": res.constraint_inf}
    return MinimizationResult(v, v.grad_norm(patch), audit, res.diagnostics)


# --------------------------------------------------------------------------
# stability ratios
# --------------------------------------------------------------------------

def stability_ratio(patch, data, p, setting, overkill_delta=6,
                    convergence_limit=0.01):
    """Discrete-over-proxy energy ratio with a proxy-convergence estimate.

    data: FaceData (H1) or (FaceData, ElementData) (Hdiv); the proxy is the
    same minimization at degree p + overkill_delta, declared converged when
    the energy decrement from delta-2 to delta is below convergence_limit.
    """
    def energy(q):
        if patch.kind == "boundary":
            from .boundary import solve_boundary_patch
            return solve_boundary_patch(patch, data, setting, q).energy
        if setting == "H1":
            return global_min_h1(patch, data, q, check=False).energy
        return global_min_hdiv(patch, data[0], data[1], q, check=False).energy

    e_p = energy(p)
    e_prev = energy(p + overkill_delta - 2)
    e_prox = energy(p + overkill_delta)
    conv = (e_prev - e_prox) / e_prox if e_prox > 0 else 0.0
    ratio = e_p / e_prox if e_prox > 0 else 1.0
    return {
        "p": p,
        "setting": setting,
        "energy_p": e_p,
        "energy_proxy": e_prox,
        "ratio": ratio,
        "proxy_convergence": conv,
        "converged": bool(conv <= convergence_limit),
        "gamma": shape_regularity(patch),
    }


# --------------------------------------------------------------------------
# refined proxy (one level of red refinement of the whole patch)
# --------------------------------------------------------------------------

def refined_proxy_energy(patch, data, p, setting):
    """Energy of the same constrained minimization over piecewise polynomials
    on the red-refined patch; an independent cross-check of the
    overkill-degree proxy."""
    from .element import _RED_CHILDREN, _EDGE_OF_MID, _subface_data
    from .spaces import (CellGeometry, FaceFrame, normal_trace_matrix,
                         scalar_project, trace_matrix)

    coords = [patch.coords[i] for i in range(len(patch.coords))]
    midpoint = {}

    def mid(a, b):
        key = tuple(sorted((a, b)))
        if key not in midpoint:
            coords.append(0.5 * (coords[a] + coords[b]))
            midpoint[key] = len(coords) - 1
        return midpoint[key]

    cells = []
    parent = []
    support = {i: frozenset([i]) for i in range(len(patch.coords))}
    for ci, cell in enumerate(patch.cells):
        ids = list(cell)
        for (a, b) in _EDGE_OF_MID:
            m = mid(cell[a], cell[b])
            ids.append(m)
            support[m] = frozenset([cell[a], cell[b]])
        arr = np.array([coords[i] for i in ids])
        for ch in _RED_CHILDREN:
            tup = tuple(ids[k] for k in ch)
            V = np.array([coords[i] for i in tup])
            if np.linalg.det((V[1:] - V[0]).T) < 0:
                tup = (tup[0], tup[1], tup[3], tup[2])
            cells.append(tup)
            parent.append(ci)
    coords = np.asarray(coords)
    geoms = [CellGeometry(coords[list(c)]) for c in cells]

    owners = {}
    for ki, c in enumerate(cells):
        for loc in range(4):
            key = tuple(sorted(set(c) - {c[loc]}))
            owners.setdefault(key, []).append(ki)

    def parent_face(key):
        sup = frozenset().union(*(support[v] for v in key))
        for f in patch.faces.values():
            if sup <= frozenset(f.key):
                return f
        return None

    if setting == "H1":
        r = data
        blocks = [cell_stiffness(g, p) for g in geoms]
        make_rows = trace_matrix
    else:
        r_faces, r_cells = data
        blocks = [cell_rtn_mass(g, p) for g in geoms]
        make_rows = None
    b = [np.zeros(B.shape[0]) for B in blocks]
    rows = []
    nf = ScalarSpace(2, p).size

    if setting == "Hdiv":
        for ki, g in enumerate(geoms):
            ci = parent[ki]
            if ci in r_cells.values:
                pg = patch.geoms[ci]

                def fk(x, pg=pg, cf=r_cells.values[ci]):
                    V = ScalarSpace(3, r_cells.degree).tabulate(
                        pg.to_reference(x), grads=False)
                    return V @ cf
                rk = scalar_project(g, fk, p)
            else:
                rk = np.zeros(ScalarSpace(3, p).size)
            rows.append(LocalRows(ki, RTNSpace(p).div_map, g.amap.det * rk,
                                  "div"))

    for key, own in owners.items():
        frame = FaceFrame(coords[list(key)])
        pf = parent_face(key)
        if len(own) == 2:
            ka, kb = own
            same_parent = parent[ka] == parent[kb]
            rhs = np.zeros(nf)
            if not same_parent and pf is not None and pf.cls == "interior":
                rsrc = (r if setting == "H1" else r_faces)
                if pf.key in rsrc.values:
                    sgn = 1.0 if np.dot(frame.normal, pf.normal) > 0 else -1.0
                    rhs = sgn * _subface_data(pf.frame, rsrc.values[pf.key],
                                              rsrc.degree, frame, p)
            # orient the row along the subface frame normal
            out_of_a = np.dot(frame.normal, frame.coords.mean(axis=0)
                              - geoms[ka].verts.mean(axis=0)) > 0
            kp, km = (ka, kb) if out_of_a else (kb, ka)
            if setting == "H1":
                rows.append(CouplingRows((kp, km),
                                         (trace_matrix(geoms[kp], frame, p),
                                          -trace_matrix(geoms[km], frame, p)),
                                         rhs, "jump"))
            else:
                rows.append(CouplingRows(
                    (kp, km),
                    (normal_trace_matrix(geoms[kp], frame, p, frame.normal),
                     -normal_trace_matrix(geoms[km], frame, p, frame.normal)),
                    rhs, "njump"))
        else:
            ki = own[0]
            if pf is None:
                raise RuntimeError("boundary subface without a parent face")
            if setting == "H1":
                if pf.cls == "external":
                    rows.append(LocalRows(ki, trace_matrix(geoms[ki], frame, p),
                                          np.zeros(nf), "ext"))
                elif pf.cls == "dirichlet":
                    rhs = _subface_data(pf.frame, r.values[pf.key], r.degree,
                                        frame, p) if pf.key in r.values \
                        else np.zeros(nf)
                    rows.append(LocalRows(ki, trace_matrix(geoms[ki], frame, p),
                                          rhs, "dirichlet"))
            else:
                if pf.cls == "dirichlet":
                    continue
                rhs = np.zeros(nf)
                if pf.key in r_faces.values:
                    sgn = 1.0 if np.dot(frame.normal, pf.normal) > 0 else -1.0
                    rhs = sgn * _subface_data(pf.frame, r_faces.values[pf.key],
                                              r_faces.degree, frame, p)
                rows.append(LocalRows(
                    ki, normal_trace_matrix(geoms[ki], frame, p, frame.normal),
                    rhs, "ntrace"))

    stab = None
    if setting == "H1":
        stab = [g.amap.det * scalar_moment(3, p) for g in geoms]
    res = solve_constrained(blocks, b, rows, stabilize_mean=stab)
    if res.constraint_inf > 1e-7:
        raise IncompatibleData(
            f"refined proxy residual {res.constraint_inf:.2e}")
    e = sum(x @ B @ x for x, B in zip(res.x, blocks))
    return float(np.sqrt(max(e, 0.0)))
