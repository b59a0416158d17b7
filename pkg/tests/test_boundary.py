"""Boundary patches: flattening, symmetrization, data extension, restriction."""

import numpy as np
import pytest

from patchext.boundary import (boundary_reduction, extend_data, flatten_patch,
                               restrict_minimizer, solve_boundary_patch,
                               symmetrize)
from patchext.errors import UnsupportedConfiguration
from patchext.families import (fixed_h1_data, fixed_hdiv_data, half_star,
                               random_boundary_patch)
from patchext.fields import BrokenScalarField
from patchext.patch import (FaceData, check_compatibility_h1,
                            check_compatibility_hdiv, shape_regularity)
from patchext.spaces import ScalarSpace

SQ2 = np.sqrt(2.0)


def test_flatten_identity_on_flat_patch():
    hs = half_star(marker="D")
    fl = flatten_patch(hs)
    assert fl.identity
    assert np.abs(fl.patch.coords - hs.coords).max() < 1e-14


def test_flatten_warped_patch():
    bp = random_boundary_patch(11, markers="D", warp=0.12)
    fl = flatten_patch(bp)
    assert not fl.identity
    # D faces coplanar through the center
    a = fl.plane_point
    n = fl.plane_normal
    for f in fl.patch.faces_of("dirichlet"):
        for v in f.key:
            assert abs((fl.patch.coords[v] - a) @ n) < 1e-12
    # gamma within the empirical factor-10 policy
    assert shape_regularity(fl.patch) <= 10 * shape_regularity(bp)


def test_flatten_rejects_interior_patch():
    from patchext.families import cube_star
    with pytest.raises(UnsupportedConfiguration):
        flatten_patch(cube_star())


def test_symmetrize_half_star():
    hs = half_star(marker="D")
    sym = symmetrize(flatten_patch(hs))
    assert sym.patch.kind == "interior"
    assert sym.patch.cell_count == 2 * hs.cell_count
    assert abs(sym.patch.solid_angle - 4 * np.pi) < 1e-10 * 4 * np.pi


def test_extend_zero_data_is_zero():
    hs = half_star(marker="D")
    sym = symmetrize(flatten_patch(hs))
    nf = ScalarSpace(2, 1).size
    z = FaceData({f.key: np.zeros(nf)
                  for f in hs.faces.values()
                  if f.cls in ("interior", "dirichlet")}, 1)
    ext = extend_data(sym, z, "H1-D")
    assert all(np.abs(v).max() < 1e-14 for v in ext.values.values())


@pytest.mark.parametrize("marker,setting", [("D", "H1-D"), ("N", "H1-N")])
def test_extend_h1_passes_interior_compat(marker, setting):
    for seed in range(6):
        bp = random_boundary_patch(seed, markers=marker, warp=0.05)
        sym = symmetrize(flatten_patch(bp))
        r = flatten_patch(bp).transfer_h1_data(fixed_h1_data(bp, 2, seed=seed))
        ext = extend_data(sym, r, setting)
        rep = check_compatibility_h1(sym.patch, ext)
        assert rep.passed, (seed, rep.boundary_defect, rep.edge_defect)


@pytest.mark.parametrize("marker,setting", [("N", "Hdiv-N"), ("D", "Hdiv-D"),
                                            ("mixed", "Hdiv-mixed")])
def test_extend_hdiv_passes_interior_compat(marker, setting):
    for seed in range(6):
        bp = random_boundary_patch(seed, markers=marker, warp=0.05)
        fl = flatten_patch(bp)
        sym = symmetrize(fl)
        rf, rc = fl.transfer_hdiv_data(*fixed_hdiv_data(bp, 1, seed=seed))
        ef, ec = extend_data(sym, (rf, rc), setting)
        rep = check_compatibility_hdiv(sym.patch, ef, ec)
        assert rep.boundary_defect <= rep.tol, (seed, rep.boundary_defect)


def test_hdiv_mixed_balancing_face_choice_is_free():
    # feasibility does not depend on which Dirichlet face absorbs the moment
    bp = random_boundary_patch(3, markers="mixed")
    fl = flatten_patch(bp)
    sym = symmetrize(fl)
    rf, rc = fl.transfer_hdiv_data(*fixed_hdiv_data(bp, 1))
    ef, ec = extend_data(sym, (rf, rc), "Hdiv-mixed")
    dkeys = sorted(f.key for f in fl.patch.faces_of("dirichlet"))
    assert np.abs(ef.values[dkeys[0]]).max() > 0
    for k in dkeys[1:]:
        assert np.abs(ef.values[k]).max() == 0


@pytest.mark.parametrize("marker,setting,factor",
                         [("D", "H1", SQ2), ("N", "H1", 1.0)])
def test_h1_reduction_chain(marker, setting, factor):
    for seed in range(5):
        bp = random_boundary_patch(seed, markers=marker, warp=0.08)
        r = fixed_h1_data(bp, 2, seed=seed)
        out = boundary_reduction(bp, r, setting, 2)
        assert max(out["restricted_audit"].values()) <= 1e-9
        assert out["restricted_energy"] <= \
            factor * out["sym_result"].energy + 1e-9
        assert out["direct"].energy <= out["restricted_energy"] + 1e-9


@pytest.mark.parametrize("marker", ["N", "D", "mixed"])
def test_hdiv_reduction_chain(marker):
    for seed in range(4):
        bp = random_boundary_patch(seed, markers=marker, warp=0.08)
        data = fixed_hdiv_data(bp, 1, seed=seed)
        out = boundary_reduction(bp, data, "Hdiv", 1)
        assert max(out["restricted_audit"].values()) <= 1e-9
        assert out["restricted_energy"] <= \
            SQ2 * out["sym_result"].energy + 1e-9
        assert out["direct"].energy <= out["restricted_energy"] + 1e-9


def test_solve_boundary_zero_data_both_paths():
    hs = half_star(marker="D")
    nf = ScalarSpace(2, 1).size
    z = FaceData({f.key: np.zeros(nf)
                  for f in hs.faces.values()
                  if f.cls in ("interior", "dirichlet")}, 1)
    direct = solve_boundary_patch(hs, z, "H1", 1)
    assert direct.energy < 1e-12
    out = boundary_reduction(hs, z, "H1", 1)
    assert out["restricted_energy"] < 1e-12


def test_h1_mixed_markers_unsupported():
    bp = random_boundary_patch(1, markers="mixed")
    r = fixed_h1_data(bp, 2)
    with pytest.raises(UnsupportedConfiguration):
        solve_boundary_patch(bp, r, "H1", 2)


def test_restriction_field_membership_h1d():
    # restricted field's Dirichlet trace equals the data
    bp = half_star(marker="D")
    r = fixed_h1_data(bp, 2)
    out = boundary_reduction(bp, r, "H1", 2)
    assert out["restricted_audit"]["dirichlet"] <= 1e-9


def test_hdiv_restrict_divergence_exact():
    bp = half_star(marker="N")
    rf, rc = fixed_hdiv_data(bp, 1)
    out = boundary_reduction(bp, (rf, rc), "Hdiv", 1)
    assert out["restricted_audit"]["div"] <= 1e-10
