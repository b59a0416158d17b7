"""Broken polynomial fields on a patch and their jump/trace operators."""

from dataclasses import dataclass

import numpy as np

from .errors import NotInteriorFace
from .spaces import RTNSpace, ScalarSpace, cell_rtn_mass, cell_stiffness, \
    rtn_div_coeffs

@dataclass
class BrokenScalarField:
    """Per-cell P_p coefficient arrays; no interelement continuity assumed."""
    coeffs: list
    degree: int

    def copy(self):
        return BrokenScalarField([c.copy() for c in self.coeffs], self.degree)

    @classmethod
    def zeros(cls, ncells, p):
        return cls([np.zeros(ScalarSpace(3, p).size) for _ in range(ncells)], p)

    def grad_norm(self, patch):
        """Broken H1 seminorm over the patch."""
        e = 0.0
        for ci, c in enumerate(self.coeffs):
            e += c @ cell_stiffness(patch.geoms[ci], self.degree) @ c
        return float(np.sqrt(max(e, 0.0)))


@dataclass
class BrokenVectorField:
    """Per-cell RTN_p coefficient arrays (Piola-mapped modal basis)."""
    coeffs: list
    degree: int

    def copy(self):
        return BrokenVectorField([c.copy() for c in self.coeffs], self.degree)

    @classmethod
    def zeros(cls, ncells, p):
        return cls([np.zeros(RTNSpace(p).size) for _ in range(ncells)], p)

    def l2_norm(self, patch):
        e = 0.0
        for ci, c in enumerate(self.coeffs):
            e += c @ cell_rtn_mass(patch.geoms[ci], self.degree) @ c
        return float(np.sqrt(max(e, 0.0)))

    def div_coeffs(self, patch, ci):
        return rtn_div_coeffs(patch.geoms[ci], self.coeffs[ci], self.degree)


def jump(patch, v, fkey):
    """[v]_F along the face normal: trace from the jump_sign=+1 cell minus
    the jump_sign=-1 cell, as a face-basis coefficient vector."""
    f = patch.faces[fkey]
    if f.cls != "interior":
        raise NotInteriorFace(f"face {fkey} is {f.cls}")
    out = np.zeros(ScalarSpace(2, v.degree).size)
    for ci in f.cells:
        out += f.jump_sign[ci] * (patch.trace_mat(ci, fkey, v.degree)
                                  @ v.coeffs[ci])
    return out


def normal_jump(patch, w, fkey):
    """[w].n_F across an interior face, as a face-basis coefficient vector."""
    f = patch.faces[fkey]
    if f.cls != "interior":
        raise NotInteriorFace(f"face {fkey} is {f.cls}")
    out = np.zeros(ScalarSpace(2, w.degree).size)
    for ci in f.cells:
        out += f.jump_sign[ci] * (patch.ntrace_mat(ci, fkey, w.degree)
                                  @ w.coeffs[ci])
    return out


def boundary_trace(patch, v, fkey):
    """Trace of a broken scalar field on a one-sided (boundary) face."""
    f = patch.faces[fkey]
    ci = f.cells[0]
    return patch.trace_mat(ci, fkey, v.degree) @ v.coeffs[ci]


def boundary_normal_trace(patch, w, fkey):
    """w.n_F (outward) on a one-sided (boundary) face."""
    f = patch.faces[fkey]
    ci = f.cells[0]
    return patch.ntrace_mat(ci, fkey, w.degree) @ w.coeffs[ci]


def jump_data_of(patch, v):
    """FaceData of all interior-face jumps of a broken scalar field."""
    from .patch import FaceData
    return FaceData({f.key: jump(patch, v, f.key)
                     for f in patch.faces_of("interior")}, v.degree)


def hdiv_data_of(patch, w):
    """Face and element data realized by an actual broken RTN field
    (normal jumps on interior faces, outward normal traces on boundary
    faces, divergences in cells) -- compatible by construction."""
    from .patch import ElementData, FaceData
    fvals = {}
    for f in patch.faces.values():
        if f.cls == "interior":
            fvals[f.key] = normal_jump(patch, w, f.key)
        elif f.cls != "dirichlet":
            fvals[f.key] = boundary_normal_trace(patch, w, f.key)
    cvals = {ci: w.div_coeffs(patch, ci) for ci in range(patch.cell_count)}
    return FaceData(fvals, w.degree), ElementData(cvals, w.degree)
