"""Vertex-patch data model: tetrahedra around a vertex, face classification,
edge fans with rotation signs, and compatibility checks on prescribed data.

Conventions
-----------
* A patch is the star of a center vertex ``a``: every cell has ``a`` as a
  vertex.  Faces containing ``a`` shared by two cells are *interior*; faces
  not containing ``a`` are *external* (they tile the patch boundary away
  from ``a``); boundary faces containing ``a`` are *dirichlet*/*neumann*.
* Interior faces carry a unit normal and a per-cell jump sign: +1 for the
  cell the normal points out of.  The jump of a broken field is
  (trace from the +1 cell) - (trace from the -1 cell).
* Around every edge through ``a`` a rotation direction is fixed from the
  first face of the fan; iota[F] = +-1 records whether the face normal
  complies with it.  Flipping a normal flips both iota and the jump, so
  iota * jump is orientation-free.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (DanglingBoundaryMarker, DegenerateCell, DegreeMismatch,
                     NonConformingPatch)
from .quadrature import segment_rule, triangle_rule
from .spaces import (CellGeometry, FaceFrame, ScalarSpace, face_values,
                     normal_trace_matrix, scalar_moment, trace_matrix)

VOLUME_FLOOR = 1e-14
COMPAT_TOL = 1e-10
COMPAT_ABS_FLOOR = 1e-13
SOLID_ANGLE_RTOL = 1e-10


def solid_angle(apex, tri):
    """Solid angle subtended at apex by a triangle (Van Oosterom-Strackee)."""
    R = np.asarray(tri, dtype=float) - np.asarray(apex, dtype=float)
    r = np.linalg.norm(R, axis=1)
    num = abs(np.linalg.det(R))
    den = (r[0] * r[1] * r[2] + np.dot(R[0], R[1]) * r[2]
           + np.dot(R[0], R[2]) * r[1] + np.dot(R[1], R[2]) * r[0])
    return 2.0 * np.arctan2(num, den)


@dataclass(frozen=True)
class FaceInfo:
    key: tuple               # sorted global vertex triple
    cls: str                 # interior | external | dirichlet | neumann
    normal: np.ndarray       # unit normal (outward for boundary faces)
    cells: tuple             # owning cell indices (2 interior, else 1)
    jump_sign: dict          # cell -> +-1 (interior faces only)
    frame: FaceFrame


@dataclass(frozen=True)
class EdgeFan:
    edge: tuple              # (center_index, other_vertex)
    faces: tuple             # ordered fan face keys
    cells: tuple             # ordered fan cell indices
    iota: dict               # face key -> +-1
    closed: bool


@dataclass(frozen=True)
class FaceData:
    """Per-face polynomial data in each face's own frame basis."""
    values: dict             # face key -> coeff array
    degree: int

    def __post_init__(self):
        n = ScalarSpace(2, self.degree).size
        for k, v in self.values.items():
            if len(v) != n:
                raise DegreeMismatch(f"face {k}: {len(v)} coeffs, expected {n}")


@dataclass(frozen=True)
class ElementData:
    """Per-cell polynomial data in the cell modal basis."""
    values: dict             # cell index -> coeff array
    degree: int

    def __post_init__(self):
        n = ScalarSpace(3, self.degree).size
        for k, v in self.values.items():
            if len(v) != n:
                raise DegreeMismatch(f"cell {k}: {len(v)} coeffs, expected {n}")


class Patch:
    """Validated vertex patch: mesh + face classification + edge fans."""

    def __init__(self, coords, cells, center, kind, faces, fans, theta):
        self.coords = coords          # (nv, 3) local vertex table
        self.cells = cells            # tuple of 4-tuples (local indices)
        self.center = center          # local index of the vertex a
        self.kind = kind              # "interior" | "boundary"
        self.faces = faces            # face key -> FaceInfo
        self.fans = fans              # (a, v) -> EdgeFan
        self.solid_angle = theta
        self.geoms = [CellGeometry(coords[list(c)]) for c in cells]
        self._trace_cache = {}
        self._ntrace_cache = {}

    # -- derived views ----------------------------------------------------
    @property
    def cell_count(self):
        return len(self.cells)

    @property
    def center_point(self):
        return self.coords[self.center]

    def faces_of(self, cls):
        return [f for f in self.faces.values() if f.cls == cls]

    def face_keys_of(self, cls):
        return [f.key for f in self.faces.values() if f.cls == cls]

    def cell_faces(self, ci, cls=None):
        """FaceInfo of the cell's faces, optionally filtered by class."""
        out = []
        cell = set(self.cells[ci])
        for loc in range(4):
            key = tuple(sorted(cell - {self.cells[ci][loc]}))
            info = self.faces[key]
            if cls is None or info.cls == cls:
                out.append(info)
        return out

    def external_face_of(self, ci):
        """The unique face of cell ci not containing the center."""
        key = tuple(sorted(set(self.cells[ci]) - {self.center}))
        return self.faces[key]

    # -- cached trace operators -------------------------------------------
    def trace_mat(self, ci, fkey, p):
        k = (ci, fkey, p)
        if k not in self._trace_cache:
            self._trace_cache[k] = trace_matrix(
                self.geoms[ci], self.faces[fkey].frame, p)
        return self._trace_cache[k]

    def ntrace_mat(self, ci, fkey, p):
        """Normal trace rows w.r.t. the face's classification normal."""
        k = (ci, fkey, p)
        if k not in self._ntrace_cache:
            self._ntrace_cache[k] = normal_trace_matrix(
                self.geoms[ci], self.faces[fkey].frame, p,
                self.faces[fkey].normal)
        return self._ntrace_cache[k]

    def edge_points(self, edge, n):
        """n Gauss points on the segment from coords[edge[0]] to coords[edge[1]]."""
        t = segment_rule(2 * n - 1).points
        A, B = self.coords[edge[0]], self.coords[edge[1]]
        return A + np.outer(t, B - A)

    def face_coords2d(self, fkey, pts3d):
        """Frame coordinates of points lying on the given face's plane."""
        fr = self.faces[fkey].frame
        E = np.column_stack([fr.e1, fr.e2])
        sol, *_ = np.linalg.lstsq(E, (np.asarray(pts3d) - fr.origin).T, rcond=None)
        return sol.T


def _ordered_fan(patch_faces, cells, center, v, coords):
    """Order the faces/cells around the edge (center, v); compute iota."""
    fan_faces = [f for f in patch_faces.values()
                 if f.cls != "external" and center in f.key and v in f.key]
    if not fan_faces:
        return None
    by_key = {f.key: f for f in fan_faces}
    # each fan cell owns exactly two fan faces
    cell_to_faces = {}
    for f in fan_faces:
        for c in f.cells:
            cell_to_faces.setdefault(c, []).append(f.key)
    for c, fl in cell_to_faces.items():
        if len(fl) != 2:
            raise NonConformingPatch(
                f"cell {c} has {len(fl)} faces around edge ({center},{v})")
    boundary_faces = sorted(f.key for f in fan_faces if f.cls != "interior")
    closed = not boundary_faces
    if len(boundary_faces) not in (0, 2):
        raise NonConformingPatch(
            f"edge ({center},{v}) fan has {len(boundary_faces)} boundary faces")

    a = coords[center]
    ez = coords[v] - a
    ez = ez / np.linalg.norm(ez)

    def compliance(f):
        w = next(i for i in f.key if i not in (center, v))
        m = coords[w] - a
        m = m - np.dot(m, ez) * ez
        m /= np.linalg.norm(m)
        return 1.0 if np.dot(f.normal, np.cross(ez, m)) > 0 else -1.0

    start = boundary_faces[0] if boundary_faces else min(by_key)
    sigma = compliance(by_key[start])

    # walk in the sigma-positive direction: cross each face along sigma * n_F
    faces_order = [start]
    f0 = by_key[start]
    if closed:
        cur = next(c for c in f0.cells if f0.jump_sign[c] * sigma == -1.0)
    else:
        cur = f0.cells[0]
    cells_order = [cur]
    prev_face = start
    while True:
        nxt_face = next(k for k in cell_to_faces[cur] if k != prev_face)
        f = by_key[nxt_face]
        if f.cls != "interior":
            faces_order.append(nxt_face)
            break
        nxt_cell = next(c for c in f.cells if c != cur)
        if closed and nxt_cell == cells_order[0] and len(cells_order) == len(cell_to_faces):
            break
        faces_order.append(nxt_face)
        cells_order.append(nxt_cell)
        prev_face, cur = nxt_face, nxt_cell
        if len(cells_order) > len(cell_to_faces):
            raise NonConformingPatch(f"edge ({center},{v}) fan does not close")
    if len(cells_order) != len(cell_to_faces):
        raise NonConformingPatch(
            f"cells around edge ({center},{v}) do not form a single fan")

    iota = {f.key: sigma * compliance(f) for f in fan_faces}
    return EdgeFan(edge=(center, v), faces=tuple(faces_order),
                   cells=tuple(cells_order), iota=iota, closed=closed)


def build_patch(cells, coords, center, boundary_markers=None):
    """Build and validate a vertex patch.

    Parameters
    ----------
    cells : list of 4-tuples of vertex indices (all containing ``center``)
    coords : (nv, 3) vertex coordinates
    center : index of the patch vertex **a**
    boundary_markers : optional {face triple -> "D" | "N"} for boundary
        faces containing the center
    """
    coords = np.asarray(coords, dtype=float)
    if not np.all(np.isfinite(coords)):
        raise DegenerateCell("non-finite vertex coordinates")
    markers = {tuple(sorted(k)): v for k, v in (boundary_markers or {}).items()}
    for v in markers.values():
        if v not in ("D", "N"):
            raise DanglingBoundaryMarker(f"marker must be D or N, got {v!r}")

    oriented = []
    seen = set()
    for cell in cells:
        cell = tuple(int(i) for i in cell)
        if center not in cell:
            raise NonConformingPatch(f"cell {cell} does not contain center {center}")
        key = tuple(sorted(cell))
        if key in seen:
            raise NonConformingPatch(f"duplicate cell {key}")
        seen.add(key)
        V = coords[list(cell)]
        det = np.linalg.det((V[1:] - V[0]).T)
        if det < 0:
            cell = (cell[0], cell[1], cell[3], cell[2])
            det = -det
        diam = max(np.linalg.norm(coords[i] - coords[j])
                   for i in cell for j in cell)
        if det / 6.0 < VOLUME_FLOOR * diam ** 3:
            raise DegenerateCell(f"cell {cell} below volume floor")
        oriented.append(cell)
    cells = tuple(oriented)
    if not cells:
        raise NonConformingPatch("empty patch")

    # face census
    owners = {}
    for ci, cell in enumerate(cells):
        for loc in range(4):
            key = tuple(sorted(set(cell) - {cell[loc]}))
            owners.setdefault(key, []).append(ci)
    faces = {}
    for key, own in owners.items():
        if len(own) > 2:
            raise NonConformingPatch(f"face {key} shared by {len(own)} cells")
        if len(own) == 2 and center not in key:
            raise NonConformingPatch(f"external face {key} shared by two cells")

    # classify
    marked = set()
    for key, own in owners.items():
        frame = FaceFrame(coords[list(key)])
        if len(own) == 2:
            if key in markers:
                raise DanglingBoundaryMarker(f"marker on interior face {key}")
            ca, cb = own
            out_of_a = _normal_out_of(frame.normal, coords, cells[ca], key)
            jump_sign = {ca: 1.0 if out_of_a else -1.0,
                         cb: -1.0 if out_of_a else 1.0}
            faces[key] = FaceInfo(key, "interior", frame.normal, (ca, cb),
                                  jump_sign, frame)
        else:
            ci = own[0]
            n = frame.normal if _normal_out_of(frame.normal, coords, cells[ci], key) \
                else -frame.normal
            if center in key:
                # markers form a partial map; unmarked boundary faces at the
                # center default to Neumann
                cls = "dirichlet" if markers.get(key, "N") == "D" else "neumann"
                marked.add(key)
            else:
                if key in markers:
                    raise DanglingBoundaryMarker(
                        f"marker on external face {key} (does not contain center)")
                cls = "external"
            faces[key] = FaceInfo(key, cls, n, (ci,), {}, frame)
    dangling = set(markers) - marked
    if dangling:
        raise DanglingBoundaryMarker(f"markers on non-patch faces: {sorted(dangling)}")

    # interior-face connectivity of the cell set
    adj = {i: set() for i in range(len(cells))}
    for f in faces.values():
        if f.cls == "interior":
            a, b = f.cells
            adj[a].add(b)
            adj[b].add(a)
    reached = {0}
    stack = [0]
    while stack:
        for j in adj[stack.pop()]:
            if j not in reached:
                reached.add(j)
                stack.append(j)
    if len(reached) != len(cells):
        raise NonConformingPatch("patch is not face-connected")

    kind = "interior" if not any(f.cls in ("dirichlet", "neumann")
                                 for f in faces.values()) else "boundary"
    theta = sum(solid_angle(coords[center],
                            coords[[i for i in c if i != center]])
                for c in cells)
    if kind == "interior":
        if abs(theta - 4 * np.pi) > SOLID_ANGLE_RTOL * 4 * np.pi:
            raise NonConformingPatch(
                f"interior patch solid angle {theta} != 4*pi (overlap or gap)")
    else:
        if not (0 < theta < 4 * np.pi * (1 - SOLID_ANGLE_RTOL)):
            raise NonConformingPatch(f"boundary patch solid angle {theta} invalid")

    fans = {}
    edge_verts = sorted({v for c in cells for v in c if v != center
                         if any(center in f.key and v in f.key and f.cls != "external"
                                for f in faces.values())})
    for v in edge_verts:
        fan = _ordered_fan(faces, cells, center, v, coords)
        if fan is not None:
            fans[(center, v)] = fan

    return Patch(coords, cells, center, kind, faces, fans, theta)


def _normal_out_of(normal, coords, cell, fkey):
    """True if `normal` points out of `cell` across face `fkey`."""
    opp = next(i for i in cell if i not in fkey)
    centroid = coords[list(fkey)].mean(axis=0)
    return np.dot(normal, centroid - coords[opp]) > 0


def reorient_for_enumeration(patch, order):
    """Interior normals flipped so each n_F points from the earlier cell in
    `order` to the later one; fans are rebuilt accordingly."""
    pos = {c: i for i, c in enumerate(order)}
    faces = {}
    for key, f in patch.faces.items():
        if f.cls != "interior":
            faces[key] = f
            continue
        ca, cb = f.cells
        earlier = ca if pos[ca] < pos[cb] else cb
        if f.jump_sign[earlier] == 1.0:
            faces[key] = f
        else:
            faces[key] = FaceInfo(key, f.cls, -f.normal, f.cells,
                                  {c: -s for c, s in f.jump_sign.items()}, f.frame)
    fans = {}
    for (c, v) in patch.fans:
        fans[(c, v)] = _ordered_fan(faces, patch.cells, c, v, patch.coords)
    out = Patch(patch.coords, patch.cells, patch.center, patch.kind,
                faces, fans, patch.solid_angle)
    return out


REGULARITY_WARNING = 1e6


def shape_regularity(patch):
    """max over cells of diameter / inscribed-ball diameter (>= sqrt(6),
    attained by the regular tetrahedron); warns on sliver-grade values."""
    gamma = max(g.diameter / (2.0 * g.inradius) for g in patch.geoms)
    if gamma > REGULARITY_WARNING:
        import warnings
        warnings.warn(f"patch shape regularity {gamma:.2e} exceeds the "
                      f"warning threshold {REGULARITY_WARNING:.0e}",
                      RuntimeWarning, stacklevel=2)
    return gamma


@dataclass
class CompatReport:
    passed: bool
    boundary_defect: float
    edge_defect: float
    tol: float
    scale: float
    detail: list = field(default_factory=list)

    def __bool__(self):
        return self.passed


def _data_scale(patch, r, keys):
    rule = triangle_rule(2 * r.degree + 2)
    s = 0.0
    for k in keys:
        s = max(s, float(np.abs(face_values(patch.faces[k].frame,
                                            r.values[k], rule.points,
                                            r.degree)).max()))
    return s if s > 0 else 1.0


def check_compatibility_h1(patch, r, mode=None):
    """Check the jump-data compatibility conditions for the H1 extension.

    (a) data vanishes on the part of each face lying on the external patch
    boundary; (b) the iota-weighted sum around each relevant edge vanishes.
    """
    if mode is None:
        mode = "interior" if patch.kind == "interior" else (
            "boundary-D" if patch.faces_of("dirichlet") else "boundary-N")
    if r.degree < 1:
        raise DegreeMismatch("H1 data requires degree >= 1")
    if mode == "interior":
        keys = patch.face_keys_of("interior")
    elif mode == "boundary-D":
        keys = patch.face_keys_of("interior") + patch.face_keys_of("dirichlet")
    elif mode == "boundary-N":
        keys = patch.face_keys_of("interior")
    else:
        raise ValueError(f"unknown mode {mode}")
    missing = [k for k in keys if k not in r.values]
    if missing:
        raise DegreeMismatch(f"missing face data on {missing}")

    nq = r.degree + 2
    scale = _data_scale(patch, r, keys)
    detail = []

    bdefect = 0.0
    for k in keys:
        far = tuple(i for i in k if i != patch.center)
        pts = patch.edge_points(far, nq)
        vals = face_values(patch.faces[k].frame, r.values[k],
                           patch.face_coords2d(k, pts), r.degree)
        d = float(np.abs(vals).max())
        if d > bdefect:
            bdefect = d
        detail.append(("face", k, d))

    edefect = 0.0
    for (c, v), fan in patch.fans.items():
        if mode == "boundary-N" and any(patch.faces[k].cls == "neumann"
                                        for k in fan.faces):
            continue
        pts = patch.edge_points((c, v), nq)
        acc = np.zeros(nq)
        for k in fan.faces:
            if k not in r.values:
                continue
            acc += fan.iota[k] * face_values(patch.faces[k].frame, r.values[k],
                                             patch.face_coords2d(k, pts),
                                             r.degree)
        d = float(np.abs(acc).max())
        if d > edefect:
            edefect = d
        detail.append(("edge", (c, v), d))

    tol = COMPAT_TOL * scale + COMPAT_ABS_FLOOR
    return CompatReport(bdefect <= tol and edefect <= tol,
                        bdefect, edefect, tol, scale, detail)


def check_compatibility_hdiv(patch, r_faces, r_cells, mode=None):
    """Check sum_K (r_K,1)_K - sum_F (r_F,1)_F = 0 (waived when Dirichlet
    faces are present on a boundary patch)."""
    if r_faces.degree != r_cells.degree:
        raise DegreeMismatch("face and cell data degrees differ")
    has_dirichlet = bool(patch.faces_of("dirichlet"))
    face_keys = [k for k, f in patch.faces.items() if f.cls != "dirichlet"]
    missing = [k for k in face_keys if k not in r_faces.values]
    if missing:
        raise DegreeMismatch(f"missing face data on {missing}")

    m3 = scalar_moment(3, r_cells.degree)
    m2 = scalar_moment(2, r_faces.degree)
    total = 0.0
    scale = 0.0
    for ci in range(patch.cell_count):
        c = patch.geoms[ci].amap.det * float(m3 @ r_cells.values.get(ci, 0 * m3))
        total += c
        scale = max(scale, abs(c))
    for k in face_keys:
        c = patch.faces[k].frame.double_area * float(m2 @ r_faces.values[k])
        total -= c
        scale = max(scale, abs(c))
    scale = scale if scale > 0 else 1.0
    tol = COMPAT_TOL * scale + COMPAT_ABS_FLOOR
    passed = has_dirichlet or abs(total) <= tol
    rep = CompatReport(passed, abs(total), 0.0, tol, scale,
                       detail=[("total", None, total),
                               ("waived", None, has_dirichlet)])
    return rep
