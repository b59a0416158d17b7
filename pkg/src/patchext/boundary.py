"""Boundary-patch machinery: flattening map, symmetrization across the
flattening plane, data extension to the symmetrized interior patch,
restriction of symmetrized minimizers, and the direct boundary solve.

The direct constrained solve on the boundary patch is the product path; the
flatten/symmetrize/extend/solve/restrict chain exists to exercise and audit
the reduction argument (restricted minimizers are admissible and their
energy is within sqrt(2) of the symmetrized one).
"""

from dataclasses import dataclass

import numpy as np

from .errors import (FlatteningDegenerate, IncompatibleData,
                     UnsupportedConfiguration)
from .extension import (MinimizationResult, audit_h1, audit_hdiv, h1_rows,
                        hdiv_rows, _stab_vectors)
from .fields import BrokenScalarField, BrokenVectorField
from .patch import (ElementData, FaceData, build_patch,
                    check_compatibility_h1, check_compatibility_hdiv)
from .quadrature import triangle_rule
from .solver import solve_constrained
from .spaces import (AffineMap, ScalarSpace, cell_rtn_mass, cell_stiffness,
                     face_values, piola_contravariant, pullback_scalar,
                     scalar_moment, scalar_project)

VOL_FLOOR = 1e-13


@dataclass
class FlattenedPatch:
    patch: object            # flattened boundary patch
    source: object           # original boundary patch
    maps: list               # per cell AffineMap: original cell -> flat cell
    plane_point: np.ndarray
    plane_normal: np.ndarray
    identity: bool

    # -- data transfer original -> flattened --------------------------------
    def transfer_h1_data(self, r):
        """r~ = r o T^-1 on each face (per-cell maps agree on shared faces)."""
        if self.identity:
            return r
        out = {}
        for key, coeffs in r.values.items():
            src = self.source.faces[key]
            dst = self.patch.faces[key]
            ci = src.cells[0]
            T = self.maps[ci]
            out[key] = _compose_face(src.frame, coeffs, r.degree, dst.frame,
                                     lambda pts: T.inverse_apply(pts))
        return FaceData(out, r.degree)

    def transfer_hdiv_data(self, r_faces, r_cells):
        """Piola-consistent transfer: volume data is scaled by 1/det and
        face data by the inverse surface Jacobian, with normal-sign
        agreement; the compatibility defect is preserved exactly."""
        if self.identity:
            return r_faces, r_cells
        fout = {}
        for key, coeffs in r_faces.values.items():
            src = self.source.faces[key]
            dst = self.patch.faces[key]
            ci = src.cells[0]
            T = self.maps[ci]
            nsrc = src.normal
            image_n = T.Binv.T @ nsrc
            c = 1.0 / (T.det * np.linalg.norm(image_n))
            sgn = 1.0 if np.dot(image_n, dst.normal) > 0 else -1.0
            fout[key] = sgn * c * _compose_face(
                src.frame, coeffs, r_faces.degree, dst.frame,
                lambda pts: T.inverse_apply(pts))
        cout = {}
        for ci, coeffs in r_cells.values.items():
            T = self.maps[ci]
            geom_src = self.source.geoms[ci]
            geom_dst = self.patch.geoms[ci]

            def f(pts, T=T, gs=geom_src, cf=coeffs):
                V = ScalarSpace(3, r_cells.degree).tabulate(
                    gs.to_reference(T.inverse_apply(pts)), grads=False)
                return (V @ cf) / T.det
            cout[ci] = scalar_project(geom_dst, f, r_cells.degree)
        return FaceData(fout, r_faces.degree), ElementData(cout, r_cells.degree)


@dataclass
class SymmetrizedPatch:
    patch: object            # interior patch T_a^hat
    flat: FlattenedPatch
    mirror: AffineMap        # the reflection S across the flattening plane
    origin: tuple            # sym cell -> ("orig"|"mirror", flat cell index)
    vmap: dict               # flat vertex id -> mirrored vertex id


def _compose_face(src_frame, coeffs, degree, dst_frame, invmap):
    """Coefficients on dst of  x -> value of src poly at invmap(x)."""
    rule = triangle_rule(2 * degree + 2)
    pts3d = invmap(dst_frame.to3d(rule.points))
    E = np.column_stack([src_frame.e1, src_frame.e2])
    xy, *_ = np.linalg.lstsq(E, (pts3d - src_frame.origin).T, rcond=None)
    vals = face_values(src_frame, coeffs, xy.T, degree)
    Vf = ScalarSpace(2, degree).tabulate(rule.points, grads=False)
    return np.einsum("q,qa,q->a", rule.weights, Vf, vals)


def _hypotheses_ok(patch):
    if patch.cell_count <= 2:
        return True
    rim = set()
    for f in patch.faces.values():
        if f.cls in ("dirichlet", "neumann"):
            rim.update(f.key)
    for f in patch.faces_of("external"):
        if not any(v not in rim for v in f.key):
            return False
    return True


def flatten_patch(patch):
    """Map a boundary patch onto one whose D/N faces lie in a plane through
    the center, preserving the connectivity and orientation."""
    if patch.kind != "boundary":
        raise UnsupportedConfiguration("flattening applies to boundary patches")
    if not _hypotheses_ok(patch):
        raise UnsupportedConfiguration(
            "an external face has no vertex interior to the external boundary "
            "and the patch has more than two cells")

    dn = [f for f in patch.faces.values() if f.cls in ("dirichlet", "neumann")]
    M = np.zeros((3, 3))
    mean_n = np.zeros(3)
    for f in dn:
        M += f.frame.area * np.outer(f.normal, f.normal)
        mean_n += f.frame.area * f.normal
    w, V = np.linalg.eigh(M)
    n_P = V[:, -1]
    if np.dot(n_P, mean_n) < 0:
        n_P = -n_P
    a = patch.center_point

    rim = sorted({v for f in dn for v in f.key})
    coords0 = patch.coords
    target = {}
    for v in rim:
        x = coords0[v]
        target[v] = x - np.dot(x - a, n_P) * n_P

    already_flat = all(np.linalg.norm(target[v] - coords0[v]) < 1e-13 *
                       (1 + np.linalg.norm(coords0[v])) for v in rim)

    adj = {}
    for c in patch.cells:
        for i in range(4):
            for j in range(i + 1, 4):
                adj.setdefault(c[i], set()).add(c[j])
                adj.setdefault(c[j], set()).add(c[i])
    used = sorted(adj)

    def propagate(damp):
        disp = {v: np.zeros(3) for v in used}
        for v in rim:
            disp[v] = target[v] - coords0[v]
        free = [v for v in used if v not in target]
        if free:
            idx = {v: i for i, v in enumerate(free)}
            L = np.zeros((len(free), len(free)))
            rhs = np.zeros((len(free), 3))
            for v in free:
                L[idx[v], idx[v]] = len(adj[v])
                for u in adj[v]:
                    if u in target:
                        rhs[idx[v]] += disp[u]
                    elif u in adj:
                        L[idx[v], idx[u]] -= 1.0
            sol = np.linalg.solve(L, rhs)
            for v in free:
                disp[v] = damp * sol[idx[v]]
        new = coords0.copy()
        for v in used:
            new[v] = coords0[v] + disp[v]
        return new

    markers = {f.key: ("D" if f.cls == "dirichlet" else "N") for f in dn}
    for damp in (1.0, 0.5, 0.0):
        new_coords = propagate(damp)
        ok = True
        for c in patch.cells:
            V4 = new_coords[list(c)]
            det = np.linalg.det((V4[1:] - V4[0]).T)
            diam = max(np.linalg.norm(V4[i] - V4[j])
                       for i in range(4) for j in range(4))
            if det / 6.0 < VOL_FLOOR * diam ** 3:
                ok = False
                break
        if not ok:
            continue
        try:
            flat = build_patch(patch.cells, new_coords, patch.center, markers)
        except Exception:
            continue
        maps = [AffineMap.between(patch.coords[list(c)], new_coords[list(c)])
                for c in patch.cells]
        return FlattenedPatch(flat, patch, maps, a.copy(), n_P,
                              identity=bool(already_flat))
    raise FlatteningDegenerate("no valid flattening displacement found")


def symmetrize(flat):
    """Reflect the flattened patch across the flattening plane; the union is
    an interior patch sharing the rim vertices."""
    fp = flat.patch
    a = flat.plane_point
    n = flat.plane_normal
    S = AffineMap(np.eye(3) - 2.0 * np.outer(n, n),
                  2.0 * np.dot(a, n) * n)

    rim = {v for f in fp.faces.values() if f.cls in ("dirichlet", "neumann")
           for v in f.key}
    coords = [fp.coords[i] for i in range(len(fp.coords))]
    vmap = {}
    for v in sorted({i for c in fp.cells for i in c}):
        if v in rim or v == fp.center:
            vmap[v] = v
        else:
            coords.append(S.apply(fp.coords[v][None, :])[0])
            vmap[v] = len(coords) - 1
    coords = np.asarray(coords)

    cells = list(fp.cells)
    origin = [("orig", ci) for ci in range(fp.cell_count)]
    for ci, c in enumerate(fp.cells):
        cells.append(tuple(vmap[v] for v in c))
        origin.append(("mirror", ci))
    sym = build_patch(cells, coords, fp.center)
    return SymmetrizedPatch(sym, flat, S, tuple(origin), vmap)


# --------------------------------------------------------------------------
# data extension
# --------------------------------------------------------------------------

def _mirror_key(sym, key):
    return tuple(sorted(sym.vmap[v] for v in key))


def _sym_sign(sym, key, ref_normal):
    """+-1 converting data along ref_normal to the symmetrized patch's
    stored normal for the face."""
    return 1.0 if np.dot(sym.patch.faces[key].normal, ref_normal) > 0 else -1.0


def _mirror_face_coeffs(sym, src_frame, coeffs, degree, dst_key):
    """Data composed with the reflection, on the mirrored face's chart."""
    dst_frame = sym.patch.faces[dst_key].frame
    return _compose_face(src_frame, coeffs, degree, dst_frame,
                         lambda pts: sym.mirror.apply(pts))


def extend_data(sym, data, setting):
    """Extend flattened-patch data to the symmetrized interior patch.

    setting: H1-D | H1-N | Hdiv-N | Hdiv-D | Hdiv-mixed.  Returns FaceData
    for H1 settings and (FaceData, ElementData) for Hdiv settings; the
    output always satisfies the interior-patch compatibility (checked).
    """
    fp = sym.flat.patch
    p = (data.degree if setting.startswith("H1") else data[0].degree)
    nf = ScalarSpace(2, p).size

    if setting.startswith("H1"):
        r = data
        if setting == "H1-D" and fp.faces_of("neumann"):
            raise UnsupportedConfiguration("H1-D extension with Neumann faces")
        if setting == "H1-N" and fp.faces_of("dirichlet"):
            raise UnsupportedConfiguration("H1-N extension with Dirichlet faces")
        vals = {}
        for f in fp.faces_of("interior"):
            vals[f.key] = _sym_sign(sym, f.key, f.normal) * embed(r, f.key, nf)
            mk = _mirror_key(sym, f.key)
            if setting == "H1-D":
                vals[mk] = np.zeros(nf)
            else:
                mirrored = _mirror_face_coeffs(sym, f.frame, embed(r, f.key, nf),
                                               p, mk)
                Sn = sym.mirror.B @ f.normal
                vals[mk] = _sym_sign(sym, mk, Sn) * mirrored
        for f in fp.faces.values():
            if f.cls == "dirichlet":
                vals[f.key] = _sym_sign(sym, f.key, f.normal) * embed(r, f.key, nf)
            elif f.cls == "neumann":
                vals[f.key] = np.zeros(nf)
        out = FaceData(vals, p)
        rep = check_compatibility_h1(sym.patch, out)
        if not rep.passed:
            raise IncompatibleData(
                f"extended H1 data fails interior compatibility "
                f"({rep.boundary_defect:.2e}/{rep.edge_defect:.2e})")
        return out

    r_faces, r_cells = data
    nc = ScalarSpace(3, p).size
    if setting == "Hdiv-N" and fp.faces_of("dirichlet"):
        raise UnsupportedConfiguration("Hdiv-N extension with Dirichlet faces")
    if setting == "Hdiv-D" and fp.faces_of("neumann"):
        raise UnsupportedConfiguration("Hdiv-D extension with Neumann faces")
    fvals = {}
    cvals = {}
    mirror_cells = {ci: si for si, (side, ci) in enumerate(sym.origin)
                    if side == "mirror"}
    orig_cells = {ci: si for si, (side, ci) in enumerate(sym.origin)
                  if side == "orig"}
    for ci in range(fp.cell_count):
        cvals[orig_cells[ci]] = embed_cellwise(r_cells, ci, nc)
    for f in fp.faces.values():
        if f.cls in ("interior", "external"):
            fvals[f.key] = _sym_sign(sym, f.key, f.normal) * \
                embed(r_faces, f.key, nf)
    if setting in ("Hdiv-N", "Hdiv-mixed"):
        for f in fp.faces_of("neumann"):
            fvals[f.key] = _sym_sign(sym, f.key, f.normal) * \
                embed(r_faces, f.key, nf)
        for ci in range(fp.cell_count):
            cvals[mirror_cells[ci]] = np.zeros(nc)
        for f in fp.faces.values():
            if f.cls in ("interior", "external"):
                fvals[_mirror_key(sym, f.key)] = np.zeros(nf)
        if setting == "Hdiv-mixed":
            dfaces = sorted(f.key for f in fp.faces_of("dirichlet"))
            if not dfaces:
                raise UnsupportedConfiguration("Hdiv-mixed requires Dirichlet faces")
            for key in dfaces:
                fvals[key] = np.zeros(nf)
            # balance the global moment on the designated (first) face
            out_f = FaceData(fvals, p)
            out_c = ElementData(cvals, p)
            defect = _global_moment(sym.patch, out_f, out_c)
            key = dfaces[0]
            area2 = sym.patch.faces[key].frame.double_area
            m0 = scalar_moment(2, p)[0]
            fvals[key] = np.zeros(nf)
            fvals[key][0] = defect / (area2 * m0)
    else:  # Hdiv-D: extension by symmetry
        for f in fp.faces_of("dirichlet"):
            fvals[f.key] = np.zeros(nf)
        for ci in range(fp.cell_count):
            geom_src = fp.geoms[ci]
            si = mirror_cells[ci]
            geom_dst = sym.patch.geoms[si]

            def f_mir(pts, gs=geom_src, cf=embed_cellwise(r_cells, ci, nc)):
                V = ScalarSpace(3, p).tabulate(
                    gs.to_reference(sym.mirror.apply(pts)), grads=False)
                return -(V @ cf)
            cvals[si] = scalar_project(geom_dst, f_mir, p)
        for f in fp.faces.values():
            if f.cls in ("interior", "external"):
                mk = _mirror_key(sym, f.key)
                mirrored = _mirror_face_coeffs(sym, f.frame,
                                               embed(r_faces, f.key, nf), p, mk)
                Sn = sym.mirror.B @ f.normal
                fvals[mk] = -_sym_sign(sym, mk, Sn) * mirrored

    out_f = FaceData(fvals, p)
    out_c = ElementData(cvals, p)
    rep = check_compatibility_hdiv(sym.patch, out_f, out_c)
    if not rep.passed:
        raise IncompatibleData(
            f"extended H(div) data fails compatibility ({rep.boundary_defect:.2e})")
    return out_f, out_c


def embed(r, key, nf):
    v = r.values.get(key)
    if v is None:
        return np.zeros(nf)
    return np.asarray(v, dtype=float)


def embed_cellwise(r_cells, ci, nc):
    v = r_cells.values.get(ci)
    if v is None:
        return np.zeros(nc)
    return np.asarray(v, dtype=float)


def _global_moment(patch, r_faces, r_cells):
    m3 = scalar_moment(3, r_cells.degree)
    m2 = scalar_moment(2, r_faces.degree)
    tot = 0.0
    for ci, c in r_cells.values.items():
        tot += patch.geoms[ci].amap.det * float(m3 @ c)
    for key, c in r_faces.values.items():
        tot -= patch.faces[key].frame.double_area * float(m2 @ c)
    return tot


# --------------------------------------------------------------------------
# restriction
# --------------------------------------------------------------------------

def restrict_minimizer(sym, field, setting):
    """Restrict a symmetrized-patch minimizer back to the flattened patch."""
    fp = sym.flat.patch
    p = field.degree
    orig_of = {ci: si for si, (side, ci) in enumerate(sym.origin)
               if side == "orig"}
    mirror_of = {ci: si for si, (side, ci) in enumerate(sym.origin)
                 if side == "mirror"}
    if setting.startswith("H1"):
        out = BrokenScalarField.zeros(fp.cell_count, p)
        for ci in range(fp.cell_count):
            out.coeffs[ci] = field.coeffs[orig_of[ci]].copy()
            if setting == "H1-D":
                out.coeffs[ci] -= pullback_scalar(
                    sym.mirror, field.coeffs[mirror_of[ci]],
                    sym.patch.geoms[mirror_of[ci]], fp.geoms[ci], p)
        return out
    out = BrokenVectorField.zeros(fp.cell_count, p)
    for ci in range(fp.cell_count):
        out.coeffs[ci] = field.coeffs[orig_of[ci]].copy()
        if setting in ("Hdiv-N", "Hdiv-mixed"):
            out.coeffs[ci] -= piola_contravariant(
                sym.mirror, field.coeffs[mirror_of[ci]],
                sym.patch.geoms[mirror_of[ci]], fp.geoms[ci], p)
    return out


# --------------------------------------------------------------------------
# direct boundary solve and the audited reduction chain
# --------------------------------------------------------------------------

def _h1_mode(patch):
    has_d = bool(patch.faces_of("dirichlet"))
    has_n = bool(patch.faces_of("neumann"))
    if has_d and has_n:
        raise UnsupportedConfiguration(
            "H1 boundary extension requires pure Dirichlet or pure Neumann")
    return "H1-D" if has_d else "H1-N"


def hdiv_mode(patch):
    has_d = bool(patch.faces_of("dirichlet"))
    has_n = bool(patch.faces_of("neumann"))
    if has_d and has_n:
        return "Hdiv-mixed"
    return "Hdiv-D" if has_d else "Hdiv-N"


def solve_boundary_patch(patch, data, setting, p=None, check=True):
    """Direct constrained minimization on a boundary patch (theorem setting
    inferred from the patch's D/N markers)."""
    if patch.kind != "boundary":
        raise UnsupportedConfiguration("patch is not a boundary patch")
    if setting == "H1":
        mode = _h1_mode(patch)
        r = data
        p = r.degree if p is None else p
        if check:
            rep = check_compatibility_h1(patch, r)
            if not rep.passed:
                raise IncompatibleData("boundary H1 data incompatible")
        blocks = [cell_stiffness(g, p) for g in patch.geoms]
        rows = h1_rows(patch, p, r, dirichlet=r if mode == "H1-D" else None)
        res = solve_constrained(blocks, [np.zeros(B.shape[0]) for B in blocks],
                                rows, stabilize_mean=_stab_vectors(patch, p))
        v = BrokenScalarField(res.x, p)
        audit = audit_h1(patch, v, r, dirichlet=r if mode == "H1-D" else None)
        return MinimizationResult(v, v.grad_norm(patch), audit,
                                  dict(res.diagnostics, mode=mode))
    if setting == "Hdiv":
        r_faces, r_cells = data
        p = r_faces.degree if p is None else p
        if check:
            rep = check_compatibility_hdiv(patch, r_faces, r_cells)
            if not rep.passed:
                raise IncompatibleData("boundary H(div) data incompatible")
        blocks = [cell_rtn_mass(g, p) for g in patch.geoms]
        rows = hdiv_rows(patch, p, r_faces, r_cells)
        res = solve_constrained(blocks, [np.zeros(B.shape[0]) for B in blocks],
                                rows)
        w = BrokenVectorField(res.x, p)
        audit = audit_hdiv(patch, w, r_faces, r_cells)
        return MinimizationResult(w, w.l2_norm(patch), audit,
                                  dict(res.diagnostics, mode=hdiv_mode(patch)))
    raise ValueError(f"unknown setting {setting!r}")


def boundary_reduction(patch, data, setting, p=None):
    """Full audited chain: flatten, symmetrize, extend, solve on the interior
    patch, restrict; returns all artifacts plus the direct solve."""
    from .extension import global_min_h1, global_min_hdiv

    flat = flatten_patch(patch)
    sym = symmetrize(flat)
    if setting == "H1":
        mode = _h1_mode(patch)
        r = flat.transfer_h1_data(data)
        p = r.degree if p is None else p
        ext = extend_data(sym, r, mode)
        sres = global_min_h1(sym.patch, ext, p, check=False)
        restricted = restrict_minimizer(sym, sres.field, mode)
        audit = audit_h1(flat.patch, restricted, r,
                         dirichlet=r if mode == "H1-D" else None)
        direct = solve_boundary_patch(flat.patch, r, "H1", p, check=False)
        energy = restricted.grad_norm(flat.patch)
    else:
        mode = hdiv_mode(patch)
        rf, rc = flat.transfer_hdiv_data(*data)
        p = rf.degree if p is None else p
        ext = extend_data(sym, (rf, rc), mode)
        sres = global_min_hdiv(sym.patch, ext[0], ext[1], p, check=False)
        restricted = restrict_minimizer(sym, sres.field, mode)
        audit = audit_hdiv(flat.patch, restricted, rf, rc)
        direct = solve_boundary_patch(flat.patch, (rf, rc), "Hdiv", p,
                                      check=False)
        energy = restricted.l2_norm(flat.patch)
    return {
        "flat": flat,
        "sym": sym,
        "extended_data": ext,
        "sym_result": sres,
        "restricted": restricted,
        "restricted_energy": energy,
        "restricted_audit": audit,
        "direct": direct,
        "mode": mode,
    }
