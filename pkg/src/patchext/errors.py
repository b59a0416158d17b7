"""Exception hierarchy for patchext."""


class PatchextError(Exception):
    """Base class for all patchext errors."""


# --- patch topology ---

class NonConformingPatch(PatchextError):
    """Two cells of the patch intersect illegally."""


class DegenerateCell(PatchextError):
    """Cell volume below the degeneracy floor."""


class DanglingBoundaryMarker(PatchextError):
    """Boundary marker attached to a face that cannot carry one."""


class UnmarkedBoundaryFace(PatchextError):
    """A boundary face that requires a D/N marker has none."""


class DegreeMismatch(PatchextError):
    """Prescribed data degrees are inconsistent."""


# --- shelling / coloring ---

class EnumerationFailed(PatchextError):
    """No valid shelling order was found."""


class OpenFan(PatchextError):
    """Operation requires a closed edge fan."""


class ColoringFailed(PatchextError):
    """Even-degree refinement or 3-coloring could not be completed."""


# --- polynomial spaces ---

class FaceNotInCell(PatchextError):
    """Requested face is not a face of the given cell."""


class NotInteriorFace(PatchextError):
    """Jump requested across a non-interior face."""


class SingularMap(PatchextError):
    """Affine map with vanishing determinant."""


# --- solvers ---

class DiscontinuousData(PatchextError):
    """Dirichlet data discontinuous across shared edges."""


class IncompatibleData(PatchextError):
    """Prescribed data violates a compatibility condition."""

    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class SingularSystem(PatchextError):
    """Constrained system unexpectedly singular or inconsistent."""


class ConstraintViolated(PatchextError):
    """A solved field fails its constraint-set membership audit."""


# --- boundary handling ---

class UnsupportedConfiguration(PatchextError):
    """Boundary patch outside the supported hypotheses."""


class FlatteningDegenerate(PatchextError):
    """Flattening produced a cell below the volume floor."""


# --- estimator ---

class OrthogonalityViolated(PatchextError):
    """Hat-function orthogonality fails at one or more vertices."""

    def __init__(self, message, vertices=()):
        super().__init__(message)
        self.vertices = tuple(vertices)


class PatchSolveFailed(PatchextError):
    """A per-vertex patch solve failed during reconstruction."""


# --- I/O ---

class ParseError(PatchextError):
    """Mesh or coefficient file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonManifold(PatchextError):
    """Mesh face shared by more than two cells."""
