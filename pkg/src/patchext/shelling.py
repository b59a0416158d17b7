"""Shelling enumeration of interior patches and two-/three-color refinements.

The enumeration orders the cells so that, writing F_i^sharp for the interior
faces of the i-th cell shared with earlier cells and F_i^flat for the rest:

  * F_1^sharp is empty and F_last^sharp holds all three interior faces;
  * |F_i^sharp| in {1, 2} in between;
  * whenever two sharp faces of cell i meet in an edge, every cell around
    that edge comes earlier.

Existence follows from shellability of the boundary sphere of the star; the
search below is a visibility-ordered heuristic backed by a backtracking
completion with exactly these invariants as the pruning predicate.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ColoringFailed, EnumerationFailed, NonConformingPatch, OpenFan


# --------------------------------------------------------------------------
# enumeration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchEnumeration:
    order: tuple    # cell indices K_1 .. K_n
    sharp: tuple    # per position: frozenset of interior face keys
    flat: tuple     # per position: frozenset of interior face keys


def _interior_faces_by_cell(patch):
    out = []
    for ci in range(patch.cell_count):
        out.append([f.key for f in patch.cell_faces(ci, "interior")])
    return out

def _face_neighbor(patch, fkey, ci):
    f = patch.faces[fkey]
    return f.cells[0] if f.cells[1] == ci else f.cells[1]


def _shared_edge(f1, f2, center):
    """The common edge of two interior faces of one cell (contains center)."""
    common = set(f1) & set(f2)
    v = next(i for i in common if i != center)
    return (center, v)


def _sharp_of(patch, cell_faces, placed, ci):
    return [k for k in cell_faces[ci]
            if _face_neighbor(patch, k, ci) in placed]


def _placement_ok(patch, cell_faces, fans, placed, ci, is_last):
    sharp = _sharp_of(patch, cell_faces, placed, ci)
    if placed and not sharp:
        return False
    if is_last:
        if len(sharp) != 3:
            return False
    elif placed and len(sharp) > 2:
        return False
    for a in range(len(sharp)):
        for b in range(a + 1, len(sharp)):
            e = _shared_edge(sharp[a], sharp[b], patch.center)
            for cj in fans[e].cells:
                if cj != ci and cj not in placed:
                    return False
    return True


def enumerate_patch(patch, seed=0):
    """Shelling order of an interior patch (Bruggesser-Mani style heuristic
    with invariant-pruned backtracking completion)."""
    if patch.kind != "interior":
        raise EnumerationFailed("enumeration requires an interior patch")
    n = patch.cell_count
    cell_faces = _interior_faces_by_cell(patch)
    fans = patch.fans
    a = patch.center_point
    dirs = np.array([patch.coords[list(patch.external_face_of(ci).key)].mean(axis=0) - a
                     for ci in range(n)])
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    rng = np.random.default_rng(seed)

    def dfs(order, placed, budget):
        if len(order) == n:
            return list(order)
        i = len(order)
        cands = []
        for ci in range(n):
            if ci in placed:
                continue
            if _placement_ok(patch, cell_faces, fans, placed, ci, i == n - 1):
                cands.append(ci)
        cands.sort(key=lambda ci: -scores[ci])
        for ci in cands:
            if budget[0] <= 0:
                return None
            budget[0] -= 1
            order.append(ci)
            placed.add(ci)
            res = dfs(order, placed, budget)
            if res is not None:
                return res
            order.pop()
            placed.remove(ci)
        return None

    for attempt in range(33):
        if attempt == 0:
            z = dirs[0]
        else:
            anchor = int(rng.integers(0, n))
            z = dirs[anchor] + 0.25 * rng.standard_normal(3)
            z /= np.linalg.norm(z)
        scores = dirs @ z
        budget = [200 * n if attempt < 32 else 4_000_000]
        result = dfs([], set(), budget)
        if result is not None:
            enum = _finish(patch, cell_faces, result)
            ok, viol = verify_enumeration(patch, enum)
            if not ok:
                raise EnumerationFailed(f"internal: produced order fails {viol}")
            return enum
    raise EnumerationFailed("no valid shelling found")


def _finish(patch, cell_faces, order):
    placed = set()
    sharp, flat = [], []
    for ci in order:
        s = frozenset(_sharp_of(patch, cell_faces, placed, ci))
        sharp.append(s)
        flat.append(frozenset(cell_faces[ci]) - s)
        placed.add(ci)
    return PatchEnumeration(tuple(order), tuple(sharp), tuple(flat))


def verify_enumeration(patch, enum):
    """Check the shelling invariants; returns (ok, violation list)."""
    n = patch.cell_count
    viol = []
    if sorted(enum.order) != list(range(n)):
        return False, ["order is not a permutation of the cells"]
    cell_faces = _interior_faces_by_cell(patch)
    placed = set()
    for i, ci in enumerate(enum.order):
        sharp = set(_sharp_of(patch, cell_faces, placed, ci))
        if sharp != set(enum.sharp[i]):
            viol.append(f"position {i+1}: stored sharp set mismatch")
        if set(enum.flat[i]) | sharp != set(cell_faces[ci]) or \
                set(enum.flat[i]) & sharp:
            viol.append(f"position {i+1}: sharp/flat do not partition")
        if i == 0 and sharp:
            viol.append("first element has nonempty sharp set")
        if i == n - 1 and len(sharp) != 3:
            viol.append("last element sharp set is not all interior faces")
        if 0 < i < n - 1 and len(sharp) not in (1, 2):
            viol.append(f"position {i+1}: |sharp| = {len(sharp)}")
        sl = sorted(sharp)
        for x in range(len(sl)):
            for y in range(x + 1, len(sl)):
                e = _shared_edge(sl[x], sl[y], patch.center)
                for cj in patch.fans[e].cells:
                    if cj != ci and cj not in placed:
                        viol.append(
                            f"position {i+1}: cell {cj} around edge {e} comes later")
        placed.add(ci)
    return not viol, viol


# --------------------------------------------------------------------------
# colored refinements
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ColoredRefinement:
    coords: np.ndarray   # refined local vertex table
    cells: tuple         # 4-tuples, center-first
    parent: tuple        # refined cell -> original cell index
    colors: dict         # refined vertex id -> color (non-center vertices)
    anchor: int          # position of the preserved cell K_*
    epsilon: tuple       # per refined cell +-1 (outward-orientation rule)
    surface: tuple | None  # (tris, protected_edges) for patch refinements


def two_color_refine(patch, anchor_cell, edge):
    """Conforming two-colored refinement of the fan around an interior edge
    (the odd case splits one non-anchor cell by the median plane)."""
    fan = patch.fans[edge] if not hasattr(edge, "cells") else edge
    if not fan.closed:
        raise OpenFan(f"edge {fan.edge} fan is open")
    if anchor_cell not in fan.cells:
        raise NonConformingPatch(f"anchor {anchor_cell} not around edge {fan.edge}")
    center, bvert = fan.edge
    m = len(fan.cells)
    # w[t] = non-edge vertex of fan face t; cell t has non-edge
    # vertices (w[t], w[t+1 mod m])
    w = [next(i for i in fan.faces[t] if i not in (center, bvert))
         for t in range(m)]

    coords = patch.coords
    cyc = []  # (w_from, w_to, parent cell, is_child)
    if m % 2 == 0:
        for t in range(m):
            cyc.append((w[t], w[(t + 1) % m], fan.cells[t]))
    else:
        split = min(c for c in fan.cells if c != anchor_cell)
        ti = fan.cells.index(split)
        mid = 0.5 * (coords[w[ti]] + coords[w[(ti + 1) % m]])
        coords = np.vstack([coords, mid])
        u = len(coords) - 1
        for t in range(m):
            if t == ti:
                cyc.append((w[t], u, fan.cells[t]))
                cyc.append((u, w[(t + 1) % m], fan.cells[t]))
            else:
                cyc.append((w[t], w[(t + 1) % m], fan.cells[t]))

    colors = {}
    for t, (wa, wb, _) in enumerate(cyc):
        colors[wa] = 1 + (t % 2)
    a = patch.center_point
    ez = coords[bvert] - a
    ez /= np.linalg.norm(ez)

    def angular_sign(i, j):
        return 1.0 if np.linalg.det(np.column_stack(
            [ez, coords[i] - a, coords[j] - a])) > 0 else -1.0

    rot = angular_sign(cyc[0][0], cyc[0][1])
    cells, parent, eps = [], [], []
    for (wa, wb, par) in cyc:
        cells.append((patch.center, bvert, wa, wb))
        parent.append(par)
        v1, v2 = (wa, wb) if colors[wa] == 1 else (wb, wa)
        eps.append(1 if angular_sign(v1, v2) == rot else -1)
    # the anchor is never split, so it appears with its original vertex set
    anchor_pos = next(i for i, (c, par) in enumerate(zip(cells, parent))
                      if par == anchor_cell and
                      set(c) == set(patch.cells[anchor_cell]))
    return ColoredRefinement(coords, tuple(cells), tuple(parent), colors,
                             anchor_pos, tuple(eps), None)


# ---- three-color refinement ----------------------------------------------

class _Disk:
    """Mutable triangulated disk on the patch boundary (vertices carry 3D
    positions; triangles remember the original external face's cell)."""

    def __init__(self, coords):
        self.coords = [np.asarray(c, dtype=float) for c in coords]
        self.tris = []       # list of (v0, v1, v2)
        self.parent = []     # per tri: original cell index
        self.protected = set()

    def add(self, tri, parent):
        self.tris.append(tuple(tri))
        self.parent.append(parent)

    def new_vertex(self, pos):
        self.coords.append(np.asarray(pos, dtype=float))
        return len(self.coords) - 1

    def edges(self):
        out = {}
        for t, tri in enumerate(self.tris):
            for i in range(3):
                e = tuple(sorted((tri[i], tri[(i + 1) % 3])))
                out.setdefault(e, []).append(t)
        return out

    def degrees(self):
        deg = {}
        for e in self.edges():
            for v in e:
                deg[v] = deg.get(v, 0) + 1
        return deg

    def bisect(self, e):
        """Split interior edge e at its midpoint (both adjacent triangles)."""
        edges = self.edges()
        owners = edges[e]
        u, v = e
        mid = self.new_vertex(0.5 * (self.coords[u] + self.coords[v]))
        for t in sorted(owners, reverse=True):
            tri = self.tris[t]
            par = self.parent[t]
            w = next(x for x in tri if x not in e)
            # keep the cyclic orientation of the original triangle
            i = tri.index(u)
            if tri[(i + 1) % 3] == v:
                t1, t2 = (u, mid, w), (mid, v, w)
            else:
                t1, t2 = (v, mid, w), (mid, u, w)
            self.tris[t] = t1
            self.tris.append(t2)
            self.parent.append(par)
        return mid

    def centroid_split(self, t):
        tri = self.tris[t]
        par = self.parent[t]
        g = self.new_vertex(np.mean([self.coords[i] for i in tri], axis=0))
        self.tris[t] = (tri[0], tri[1], g)
        self.tris.append((tri[1], tri[2], g))
        self.parent.append(par)
        self.tris.append((tri[2], tri[0], g))
        self.parent.append(par)
        return g


def _subdivide_barycentric(disk):
    """Barycentric subdivision of every triangle, skipping midpoints on
    protected (corner-side) edges; conforming by a global midpoint registry."""
    midpoint = {}
    edges = disk.edges()
    for e in edges:
        if e not in disk.protected:
            midpoint[e] = disk.new_vertex(
                0.5 * (disk.coords[e[0]] + disk.coords[e[1]]))
    tris, parents = disk.tris, disk.parent
    disk.tris, disk.parent = [], []
    for tri, par in zip(tris, parents):
        b = disk.new_vertex(np.mean([disk.coords[i] for i in tri], axis=0))
        path = []
        for i in range(3):
            u, v = tri[i], tri[(i + 1) % 3]
            path.append(u)
            e = tuple(sorted((u, v)))
            if e in midpoint:
                path.append(midpoint[e])
        for i in range(len(path)):
            disk.add((path[i], path[(i + 1) % len(path)], b), par)


def _parity_repair(disk):
    """Local subdivisions until every vertex has even degree."""
    for _ in range(4000):
        deg = disk.degrees()
        odd = sorted(v for v, d in deg.items() if d % 2 == 1)
        if not odd:
            return
        odd_set = set(odd)
        # paper-style move: a triangle whose three vertices are all odd
        cand = [t for t, tri in enumerate(disk.tris)
                if all(v in odd_set for v in tri)]
        if cand:
            t = min(cand, key=lambda t: tuple(sorted(disk.tris[t])))
            disk.centroid_split(t)
            continue
        # otherwise one edge-bisection step along a shortest opposite-vertex
        # path between two odd vertices (flips exactly the two opposite
        # vertices of the bisected edge)
        edges = disk.edges()
        gamma = {}
        for e, owners in edges.items():
            if e in disk.protected or len(owners) != 2:
                continue
            opp = tuple(sorted(next(x for x in disk.tris[t] if x not in e)
                               for t in owners))
            gamma.setdefault(opp[0], {})[opp[1]] = e
            gamma.setdefault(opp[1], {})[opp[0]] = e
        src = odd[0]
        prev = {src: None}
        queue = [src]
        found = None
        while queue and found is None:
            nxt = []
            for u in queue:
                for w in sorted(gamma.get(u, {})):
                    if w not in prev:
                        prev[w] = u
                        if w in odd_set and w != src:
                            found = w
                            break
                        nxt.append(w)
                if found:
                    break
            queue = nxt
        if found is None:
            raise ColoringFailed("odd vertices not connected in the "
                                 "opposite-vertex graph")
        # first step of the path from src
        node = found
        while prev[node] != src:
            node = prev[node]
        disk.bisect(gamma[src][node])
    raise ColoringFailed("parity repair did not terminate")


def _three_color(disk):
    """Proper 3-coloring of the triangulation graph (DSATUR backtracking)."""
    adj = {}
    for (u, v) in disk.edges():
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    verts = sorted(adj)
    color = {}

    def pick():
        best, key = None, None
        for v in verts:
            if v in color:
                continue
            sat = len({color[w] for w in adj[v] if w in color})
            k = (sat, len(adj[v]), -v)
            if best is None or k > key:
                best, key = v, k
        return best

    def go():
        v = pick()
        if v is None:
            return True
        used = {color[w] for w in adj[v] if w in color}
        for c in (1, 2, 3):
            if c in used:
                continue
            color[v] = c
            if go():
                return True
            del color[v]
        return False

    if not go():
        raise ColoringFailed("even-degree triangulation is not 3-colorable")
    return color


def three_color_refine(patch, anchor_cell):
    """Three-colored conforming refinement of an interior patch keeping the
    anchor cell intact (surface refinement to even degrees, 3-coloring,
    lift by coning from the center)."""
    if patch.kind != "interior":
        raise ColoringFailed("three-color refinement requires an interior patch")
    corner = tuple(sorted(set(patch.cells[anchor_cell]) - {patch.center}))

    disk = _Disk(patch.coords)
    apex0 = patch.center_point
    for ci in range(patch.cell_count):
        if ci == anchor_cell:
            continue
        f = patch.external_face_of(ci)
        tri = f.key
        V = patch.coords[list(tri)]
        if np.dot(np.cross(V[1] - V[0], V[2] - V[0]),
                  V.mean(axis=0) - apex0) < 0:
            tri = (tri[0], tri[2], tri[1])
        disk.add(tri, ci)
    for i in range(3):
        disk.protected.add(tuple(sorted((corner[i], corner[(i + 1) % 3]))))

    _tutte_audit(disk, corner)
    _subdivide_barycentric(disk)
    _parity_repair(disk)
    deg = disk.degrees()
    bad = [v for v, d in deg.items() if d % 2 == 1]
    if bad:
        raise ColoringFailed(f"odd degrees remain at {bad}")
    colors = _three_color(disk)

    a = patch.center
    apex = patch.center_point
    coords = np.array(disk.coords)
    cells, parents, eps = [patch.cells[anchor_cell]], [anchor_cell], []
    for tri, par in zip(disk.tris, disk.parent):
        cells.append((a,) + tuple(tri))
        parents.append(par)
    out_cells = []
    for c in cells:
        V = coords[list(c)]
        if np.linalg.det((V[1:] - V[0]).T) < 0:
            c = (c[0], c[1], c[3], c[2])
        out_cells.append(c)
    for c in out_cells:
        non_a = [v for v in c if v != a]
        non_a.sort(key=lambda v: colors[v])
        v1, v2, v3 = (coords[v] for v in non_a)
        n = np.cross(v2 - v1, v3 - v1)
        centroid = (v1 + v2 + v3) / 3.0
        eps.append(1 if np.dot(n, centroid - apex) > 0 else -1)
    return ColoredRefinement(coords, tuple(out_cells), tuple(parents), colors,
                             0, tuple(eps),
                             (tuple(disk.tris), frozenset(disk.protected)))


def _tutte_audit(disk, corner):
    """Tutte embedding of the disk with the corner triangle pinned; validates
    the disk topology (all embedded triangles positively oriented)."""
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    verts = sorted({v for t in disk.tris for v in t})
    idx = {v: i for i, v in enumerate(verts)}
    pin = {corner[0]: (0.0, 0.0), corner[1]: (1.0, 0.0), corner[2]: (0.0, 1.0)}
    free = [v for v in verts if v not in pin]
    if not free:
        return
    fidx = {v: i for i, v in enumerate(free)}
    adj = {v: set() for v in verts}
    for (u, v) in disk.edges():
        adj[u].add(v)
        adj[v].add(u)
    rows, cols, vals = [], [], []
    rhs = np.zeros((len(free), 2))
    for v in free:
        rows.append(fidx[v]); cols.append(fidx[v]); vals.append(float(len(adj[v])))
        for w in adj[v]:
            if w in pin:
                rhs[fidx[v]] += pin[w]
            else:
                rows.append(fidx[v]); cols.append(fidx[w]); vals.append(-1.0)
    L = sp.csr_matrix((vals, (rows, cols)), shape=(len(free), len(free)))
    xy = spla.spsolve(L.tocsc(), rhs)
    if xy.ndim == 1:
        xy = xy.reshape(1, -1)
    pos = {v: np.array(pin[v]) if v in pin else xy[fidx[v]] for v in verts}
    orient = None
    for tri in disk.tris:
        p0, p1, p2 = pos[tri[0]], pos[tri[1]], pos[tri[2]]
        a, b = p1 - p0, p2 - p0
        s = np.sign(a[0] * b[1] - a[1] * b[0])
        if s == 0:
            raise ColoringFailed("degenerate triangle in Tutte embedding")
        if orient is None:
            orient = s
        elif s != orient:
            raise ColoringFailed("fold-over in Tutte embedding of the patch boundary")
