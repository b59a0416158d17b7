"""Patch-level sweeps, global minimizers, residual lifting, stability ratios."""

import numpy as np
import pytest

from patchext.errors import IncompatibleData
from patchext.families import (cube_star, fixed_h1_data, fixed_hdiv_data,
                               random_h1_data, random_hdiv_data,
                               random_interior_patch)
from patchext.fields import BrokenScalarField, BrokenVectorField, \
    hdiv_data_of, jump_data_of
from patchext.extension import (audit_h1, audit_hdiv, global_min_h1,
                                global_min_hdiv, lift_residual_h1,
                                refined_proxy_energy, stability_ratio,
                                sweep_construct_h1, sweep_construct_hdiv)
from patchext.patch import ElementData, FaceData
from patchext.shelling import enumerate_patch
from patchext.spaces import ScalarSpace, rtn_project, scalar_project

P = cube_star()
ENUM = enumerate_patch(P, seed=1)


def test_sweep_h1_zero_data():
    z = FaceData({f.key: np.zeros(ScalarSpace(2, 2).size)
                  for f in P.faces_of("interior")}, 2)
    w = sweep_construct_h1(P, ENUM, z)
    assert w.grad_norm(P) == 0.0


def test_sweep_h1_reproduces_jumps():
    # data = jumps of a known broken polynomial with zero boundary trace;
    # the sweep reproduces the jumps exactly, not the field itself
    rng = np.random.default_rng(3)
    coeffs = []
    for ci, g in enumerate(P.geoms):
        cell = P.cells[ci]
        V = np.vstack([P.coords[list(cell)].T, np.ones(4)])
        coef = np.linalg.solve(V.T, np.eye(4)[cell.index(P.center)])
        a, bb = rng.standard_normal(2)

        def f(x, coef=coef, a=a, bb=bb):
            lam = x @ coef[:3] + coef[3]
            return lam * (a + bb * x[:, 1])
        coeffs.append(scalar_project(g, f, 2))
    u = BrokenScalarField(coeffs, 2)
    r = jump_data_of(P, u)
    w = sweep_construct_h1(P, ENUM, r)
    aud = audit_h1(P, w, r)
    assert max(aud.values()) < 1e-12
    assert any(np.abs(w.coeffs[ci] - u.coeffs[ci]).max() > 1e-6
               for ci in range(P.cell_count))


def test_sweep_energy_dominates_global():
    r = fixed_h1_data(P, 2)
    w = sweep_construct_h1(P, ENUM, r)
    res = global_min_h1(P, r, 2, enumeration=ENUM)
    assert w.grad_norm(P) >= res.energy - 1e-9


def test_global_h1_zero_data():
    z = FaceData({f.key: np.zeros(ScalarSpace(2, 1).size)
                  for f in P.faces_of("interior")}, 1)
    res = global_min_h1(P, z, 1)
    assert res.energy < 1e-12


def test_global_h1_seed_independence_and_uniqueness():
    r = fixed_h1_data(P, 2)
    res1 = global_min_h1(P, r, 2, enumeration=ENUM)
    tau2 = sweep_construct_h1(P, enumerate_patch(P, seed=9), r)
    res2 = global_min_h1(P, r, 2, tau=tau2)
    assert abs(res1.energy - res2.energy) < 1e-9
    for a, b in zip(res1.field.coeffs, res2.field.coeffs):
        assert np.abs(a - b).max() < 1e-9


def test_shift_consistency_h1():
    # direct multiplier solve over the broken space == tau-shifted conforming
    r = fixed_h1_data(P, 2)
    res_s = global_min_h1(P, r, 2, enumeration=ENUM)
    res_d = global_min_h1(P, r, 2, method="direct")
    assert abs(res_s.energy - res_d.energy) < 1e-9
    for a, b in zip(res_s.field.coeffs, res_d.field.coeffs):
        assert np.abs(a - b).max() < 1e-9


def test_global_h1_incompatible_raises():
    nf = ScalarSpace(2, 2).size
    vals = {f.key: np.zeros(nf) for f in P.faces_of("interior")}
    vals[sorted(vals)[0]][0] = 1.0
    with pytest.raises(IncompatibleData):
        global_min_h1(P, FaceData(vals, 2), 2)


def test_sweep_hdiv_constraints_and_compat_defect():
    rf, rc = fixed_hdiv_data(P, 1)
    w = sweep_construct_hdiv(P, ENUM, rf, rc)
    aud = audit_hdiv(P, w, rf, rc)
    assert max(aud.values()) < 1e-11
    # inject a moment perturbation into a sharp face of the last cell: the
    # last-element Neumann defect equals the injected amount
    last = ENUM.order[-1]
    fkey = sorted(ENUM.sharp[-1])[0]
    eps = 1e-3
    rf2 = FaceData({k: v.copy() for k, v in rf.values.items()}, rf.degree)
    from patchext.spaces import scalar_moment
    m0 = scalar_moment(2, rf.degree)[0]
    area2 = P.faces[fkey].frame.double_area
    rf2.values[fkey][0] += eps / (area2 * m0)   # (r_F,1) moment grows by eps
    with pytest.raises(IncompatibleData) as exc:
        sweep_construct_hdiv(P, ENUM, rf2, rc)
    sgn = P.faces[fkey].jump_sign[next(c for c in P.faces[fkey].cells
                                       if c != last)]
    assert abs(abs(exc.value.defect) - eps) < 1e-12


def test_global_hdiv_divergence_exact_and_below_sweep():
    rf, rc = fixed_hdiv_data(P, 1)
    w = sweep_construct_hdiv(P, ENUM, rf, rc)
    res = global_min_hdiv(P, rf, rc, 1, enumeration=ENUM)
    assert res.constraint_residuals["div"] < 1e-11
    assert res.energy <= w.l2_norm(P) + 1e-9
    res_d = global_min_hdiv(P, rf, rc, 1, method="direct")
    assert abs(res.energy - res_d.energy) < 1e-9


def test_inclusion_chain():
    # proxy <= global <= sweep on several random instances
    for seed in (0, 1, 2):
        patch = random_interior_patch(seed, n_cells=None)
        r = random_h1_data(patch, 2, seed)
        enum = enumerate_patch(patch, seed=seed)
        sweep = sweep_construct_h1(patch, enum, r, 2).grad_norm(patch)
        disc = global_min_h1(patch, r, 2, enumeration=enum).energy
        proxy = global_min_h1(patch, r, 6, check=False).energy
        assert proxy <= disc + 1e-9
        assert disc <= sweep + 1e-9


def test_lift_zero_data():
    nf = ScalarSpace(2, 1).size
    nc = ScalarSpace(3, 1).size
    rf = FaceData({f.key: np.zeros(nf) for f in P.faces.values()}, 1)
    rc = ElementData({ci: np.zeros(nc) for ci in range(P.cell_count)}, 1)
    res = lift_residual_h1(P, rf, rc, 3)
    assert res.energy < 1e-12


def test_lift_functional_annihilates_constants():
    rf, rc = fixed_hdiv_data(P, 1)
    # the total moment (value of the functional on constants) vanishes due to
    # the compatibility of the data
    from patchext.patch import check_compatibility_hdiv
    rep = check_compatibility_hdiv(P, rf, rc)
    assert rep.passed
    res = lift_residual_h1(P, rf, rc, 4)
    assert res.constraint_residuals["jump"] < 1e-10
    # mean-zero normalization holds
    from patchext.spaces import scalar_moment
    total = sum(P.geoms[ci].amap.det * (scalar_moment(3, 4) @ res.field.coeffs[ci])
                for ci in range(P.cell_count))
    assert abs(total) < 1e-10


def test_lift_incompatible_raises():
    nf = ScalarSpace(2, 1).size
    nc = ScalarSpace(3, 1).size
    rf = {f.key: np.zeros(nf) for f in P.faces.values()}
    rc = {ci: np.zeros(nc) for ci in range(P.cell_count)}
    rc[0] = rc[0].copy()
    rc[0][0] = 1.0      # nonzero total volume moment
    with pytest.raises(IncompatibleData):
        lift_residual_h1(P, FaceData(rf, 1), ElementData(rc, 1), 3)


def test_lift_duality_identity():
    # |grad r^a| at overkill matches the H(div) overkill proxy energy
    rf, rc = fixed_hdiv_data(P, 1)
    lift = lift_residual_h1(P, rf, rc, 8)
    prox = global_min_hdiv(P, rf, rc, 8, check=False)
    assert abs(lift.energy - prox.energy) / prox.energy < 1e-3


def test_stability_ratio_row():
    r = fixed_h1_data(P, 1)
    row = stability_ratio(P, r, 1, "H1")
    assert row["ratio"] >= 1 - 1e-6
    assert row["converged"]
    assert set(row) >= {"p", "setting", "energy_p", "energy_proxy", "ratio",
                        "proxy_convergence", "gamma"}


def test_stability_ratio_exact_data_in_space():
    # data realized by a degree-p broken field whose minimizer is degree p:
    # zero-divergence gradient-type field gives ratio -> 1
    rng = np.random.default_rng(2)
    w = BrokenVectorField([rtn_project(g, lambda x: np.tile([1.0, 2.0, -1.0],
                                                            (len(x), 1)), 0)
                           for g in P.geoms], 0)
    rf, rc = hdiv_data_of(P, w)
    row = stability_ratio(P, (rf, rc), 0, "Hdiv")
    assert abs(row["ratio"] - 1.0) < 1e-9


def test_refined_proxy_close_to_overkill():
    r = fixed_h1_data(P, 2)
    e_ref = refined_proxy_energy(P, r, 4, "H1")
    e_ok = global_min_h1(P, r, 8, check=False).energy
    assert abs(e_ref - e_ok) / e_ok < 0.02
    rf, rc = fixed_hdiv_data(P, 1)
    e_ref = refined_proxy_energy(P, (rf, rc), 3, "Hdiv")
    e_ok = global_min_hdiv(P, rf, rc, 7, check=False).energy
    assert abs(e_ref - e_ok) / e_ok < 0.02


def test_hdiv_sweep_p0():
    rf, rc = fixed_hdiv_data(P, 0)
    w = sweep_construct_hdiv(P, ENUM, rf, rc)
    assert max(audit_hdiv(P, w, rf, rc).values()) < 1e-11
