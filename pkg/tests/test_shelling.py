"""Shelling enumeration against an independently coded brute-force validator."""

import itertools

import numpy as np
import pytest

from patchext.errors import EnumerationFailed
from patchext.families import cube_star, half_star, random_interior_patch
from patchext.shelling import (PatchEnumeration, enumerate_patch,
                               verify_enumeration)


def brute_force_valid(patch, order):
    """Oracle: direct transcription of the enumeration properties -- first
    sharp set empty, last complete, middles of size 1 or 2, and every edge
    shared by two sharp faces fully enumerated earlier."""
    n = patch.cell_count
    placed = set()
    for i, ci in enumerate(order):
        cell = set(patch.cells[ci])
        sharp = []
        for f in patch.cell_faces(ci, "interior"):
            other = f.cells[0] if f.cells[1] == ci else f.cells[1]
            if other in placed:
                sharp.append(f.key)
        if i == 0 and sharp:
            return False
        if i == n - 1 and len(sharp) != 3:
            return False
        if 0 < i < n - 1 and len(sharp) not in (1, 2):
            return False
        for fa, fb in itertools.combinations(sharp, 2):
            shared = set(fa) & set(fb)
            v = next(x for x in shared if x != patch.center)
            for cj, cell_j in enumerate(patch.cells):
                if cj == ci or cj in placed:
                    continue
                if patch.center in cell_j and v in cell_j:
                    return False
        placed.add(ci)
    return True


def all_valid_orders(patch):
    return [perm for perm in itertools.permutations(range(patch.cell_count))
            if brute_force_valid(patch, perm)]


def octahedron_star():
    pts = np.vstack([np.zeros(3), np.eye(3), -np.eye(3)])
    cells = [(0, 1 + a, 1 + b, 1 + c)
             for a in (0, 3) for b in (1, 4) for c in (2, 5)]
    from patchext.patch import build_patch
    return build_patch(cells, pts, 0)


def test_octahedron_star_exhaustive():
    # 8-cell minimal-ish interior star: the brute-force search over all 8!
    # orders finds valid shellings, and enumerate_patch returns one of them
    p = octahedron_star()
    count = 0
    found = None
    for perm in itertools.permutations(range(8)):
        if brute_force_valid(p, perm):
            count += 1
            if found is None:
                found = perm
    assert count > 0
    enum = enumerate_patch(p, seed=0)
    assert brute_force_valid(p, enum.order)
    ok, viol = verify_enumeration(p, enum)
    assert ok and not viol
    # rotational orders around any single edge extend to valid shellings of
    # the fan cells placed consecutively (sanity on the oracle itself)
    fan = next(iter(p.fans.values()))
    assert fan.closed and len(fan.cells) == 4


def test_cube_star_enumeration():
    p = cube_star()
    enum = enumerate_patch(p, seed=7)
    ok, viol = verify_enumeration(p, enum)
    assert ok and not viol
    assert len(enum.sharp[0]) == 0
    assert len(enum.sharp[-1]) == 3
    assert all(len(s) in (1, 2) for s in enum.sharp[1:-1])
    assert brute_force_valid(p, enum.order)


def test_verify_agrees_with_brute_force_on_random_permutations():
    p = cube_star()
    rng = np.random.default_rng(3)
    from patchext.shelling import _finish, _interior_faces_by_cell
    cf = _interior_faces_by_cell(p)
    n_false = 0
    for _ in range(200):
        perm = list(rng.permutation(p.cell_count))
        enum = _finish(p, cf, perm)
        ok, viol = verify_enumeration(p, enum)
        assert ok == brute_force_valid(p, perm)
        if not ok:
            n_false += 1
            assert viol
    assert n_false > 0


def test_reversed_with_stored_sets_fails():
    p = cube_star()
    enum = enumerate_patch(p, seed=1)
    rev = PatchEnumeration(tuple(reversed(enum.order)),
                           tuple(reversed(enum.sharp)),
                           tuple(reversed(enum.flat)))
    ok, viol = verify_enumeration(p, rev)
    assert not ok
    assert any("first element" in v or "mismatch" in v for v in viol)


def test_boundary_patch_rejected():
    with pytest.raises(EnumerationFailed):
        enumerate_patch(half_star())


@pytest.mark.parametrize("seed", range(0, 40, 7))
def test_random_patches_shell_and_verify(seed):
    p = random_interior_patch(seed)
    enum = enumerate_patch(p, seed=seed)
    ok, viol = verify_enumeration(p, enum)
    assert ok, viol
    assert brute_force_valid(p, enum.order)


def test_determinism():
    p = cube_star()
    e1 = enumerate_patch(p, seed=5)
    e2 = enumerate_patch(p, seed=5)
    assert e1.order == e2.order
