import itertools
import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsedom.dyadic import (
    Box,
    CubeId,
    DyadicTree,
    build_tree,
    geometry,
    inner_boundary,
    inner_boundary_distance_sq,
    inrdist,
    is_lagom,
    lagom_family,
    lagom_mask,
    morton_decode,
    morton_decode_array,
    morton_encode,
    rdist_geom,
    rdist_lagom,
)
from sparsedom.errors import ResourceCapError


def iv(a, b):
    a, b = Fr(a), Fr(b)
    return Box((a,), b - a)


# -- construction -----------------------------------------------------------

def test_cube_counts():
    assert DyadicTree(1, 2).n_cubes == 7
    t = DyadicTree(2, 1)
    assert t.n_cubes == 5
    assert len(t.children(t.root)) == 4


def test_leaf_cap():
    with pytest.raises(ResourceCapError):
        build_tree(1, 20)
    assert build_tree(1, 20, leaf_cap=None).n_leaves == 2**20


def test_rejects_non_dyadic_root():
    with pytest.raises(ValueError):
        DyadicTree(1, 2, corner=(Fr(1, 3),))
    with pytest.raises(ValueError):
        DyadicTree(1, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3), st.integers(0, 6), st.data())
def test_morton_roundtrip(dim, level, data):
    idx = tuple(data.draw(st.integers(0, 2**level - 1)) for _ in range(dim))
    k = morton_encode(idx, level)
    assert 0 <= k < 2 ** (dim * level)
    assert morton_decode(k, dim, level) == idx
    assert tuple(morton_decode_array(np.array([k]), dim, level)[0]) == idx


@pytest.mark.parametrize("dim,depth", [(1, 4), (2, 3), (3, 2)])
def test_children_partition_parent(dim, depth):
    tree = DyadicTree(dim, depth, corner=(Fr(-3, 2),) * dim, side=Fr(3))
    for q in tree.cubes():
        assert tree.cube(tree.gid(q)) == q
        if q.level == depth:
            continue
        box = tree.box(q)
        kids = [tree.box(c) for c in tree.children(q)]
        assert all(tree.parent(c) == q for c in tree.children(q))
        assert all(box.contains(k) for k in kids)
        assert sum(k.volume for k in kids) == box.volume
        # pairwise disjoint half-open cubes
        for a, b in itertools.combinations(kids, 2):
            assert any(x + a.side <= y or y + b.side <= x for x, y in zip(a.corner, b.corner))
        lo, hi = tree.leaf_range(q)
        kid_ranges = sorted(tree.leaf_range(c) for c in tree.children(q))
        assert kid_ranges[0][0] == lo and kid_ranges[-1][1] == hi
        assert all(r[1] == s[0] for r, s in zip(kid_ranges, kid_ranges[1:]))


def test_parent_gid_vectorized():
    tree = DyadicTree(2, 3)
    g = np.arange(1, tree.n_cubes)
    assert [tree.gid(tree.parent(tree.cube(int(x)))) for x in g] == tree.parent_gid(g).tolist()


# -- pair geometry ----------------------------------------------------------

def test_identical_cubes():
    tree = DyadicTree(1, 3)
    q = CubeId(2, (1,))
    s = geometry(tree, q, q)
    assert s.ec == 1 and s.rdist_geom == 1 and s.bracket == tree.box(q)


def test_nested_cubes():
    s = geometry(None, iv(0, Fr(1, 4)), iv(0, 1))
    assert s.ec == Fr(1, 4)
    assert s.rdist_geom == 1
    assert s.bracket == iv(0, 1)


def _brute_bracket_1d(a: Box, b: Box):
    """Smallest interval containing both, scanning sides and corners on a fine grid."""
    lo = min(a.corner[0], b.corner[0])
    hi = max(a.hi[0], b.hi[0])
    step = Fr(1, 64)
    best = None
    side = max(a.side, b.side)
    while best is None:
        c = lo - side
        while c <= hi:
            if c <= lo and c + side >= hi:
                cand = Box((c,), side)
                key = (side, abs(cand.center[0]), c)
                if best is None or key < best[0]:
                    best = (key, cand)
            c += step
        side += step
    return best[1]


@pytest.mark.parametrize(
    "a,b",
    [
        ((0, Fr(1, 4)), (Fr(1, 2), Fr(3, 4))),
        ((Fr(-1, 2), Fr(-1, 4)), (Fr(1, 4), Fr(1, 2))),
        ((1, 2), (Fr(5, 2), 3)),
        ((Fr(-3, 4), Fr(-1, 2)), (Fr(-1, 8), 0)),
    ],
)
def test_bracket_matches_covering_scan(a, b):
    A, B = iv(*a), iv(*b)
    br = _brute_bracket_1d(A, B)
    s = geometry(None, A, B)
    assert s.bracket == br
    assert s.rdist_geom == br.side / max(A.side, B.side)


def test_bracket_example_value():
    s = geometry(None, iv(0, Fr(1, 4)), iv(Fr(1, 2), Fr(3, 4)))
    assert s.bracket == iv(0, Fr(3, 4))
    assert s.rdist_geom == 3


boxes_2d = st.builds(
    lambda k, i, j: Box((Fr(i, 2**k), Fr(j, 2**k)), Fr(1, 2**k)),
    st.integers(0, 5),
    st.integers(-40, 40),
    st.integers(-40, 40),
)


@settings(max_examples=300, deadline=None)
@given(boxes_2d, boxes_2d)
def test_pair_statistics_properties(a, b):
    s, t = geometry(None, a, b), geometry(None, b, a)
    assert s.ec == t.ec and s.rdist_geom == t.rdist_geom
    assert 0 < s.ec <= 1
    assert s.rdist_geom >= 1
    assert s.bracket.contains(a) and s.bracket.contains(b)
    fits = s.bracket.side == max(a.side, b.side)
    assert (s.rdist_geom == 1) == fits
    assert rdist_lagom(a, b) >= 1


def test_rdist_comparability_constant(rng):
    """rdist_geom is comparable to 1 + |c(I)-c(J)|/(l(I)+l(J)) within 4 sqrt(n)."""
    for dim in (1, 2):
        worst = 0.0
        for _ in range(10_000):
            ka, kb = rng.integers(0, 6, 2)
            a = Box(tuple(Fr(int(x), 2 ** int(ka)) for x in rng.integers(-64, 64, dim)), Fr(1, 2 ** int(ka)))
            b = Box(tuple(Fr(int(x), 2 ** int(kb)) for x in rng.integers(-64, 64, dim)), Fr(1, 2 ** int(kb)))
            r = float(rdist_geom(a, b))
            d = math.dist([float(c) for c in a.center], [float(c) for c in b.center])
            other = 1 + d / float(a.side + b.side)
            worst = max(worst, r / other, other / r)
        assert worst <= 4 * math.sqrt(dim)


def test_inner_boundary_points():
    pts = sorted(t for _, t in inner_boundary(iv(0, 1)))
    assert pts == [0, Fr(1, 2), 1]
    planes = inner_boundary(Box((Fr(0), Fr(0)), Fr(1)))
    assert (0, Fr(1, 2)) in planes and (1, Fr(1, 2)) in planes and len(planes) == 6


def _point_set_distance(j: Box, pts):
    return min(max(Fr(0), j.corner[0] - p, p - j.hi[0]) for p in pts)


@pytest.mark.parametrize("j", [iv(Fr(1, 8), Fr(1, 4)), iv(Fr(1, 4), Fr(3, 8)), iv(Fr(5, 8), Fr(3, 4)), iv(0, Fr(1, 8))])
def test_inner_boundary_distance_matches_points(j):
    q = iv(0, 1)
    d = _point_set_distance(j, [Fr(0), Fr(1, 2), Fr(1)])
    assert inner_boundary_distance_sq(j, q) == d * d


def test_inrdist_values():
    q = iv(0, 1)
    assert inrdist(q, iv(Fr(1, 8), Fr(1, 4))) == pytest.approx(2.0)  # dist 1/8, side 1/8
    assert inrdist(q, iv(Fr(1, 4), Fr(1, 2))) == 1.0
    assert inrdist(q, iv(5, 6)) is None


# -- lagom ----------------------------------------------------------------

def test_lagom_whole_tree_for_large_N():
    tree = DyadicTree(1, 4)
    assert lagom_family(tree, 5) == frozenset(tree.cubes())


def test_lagom_side_filter():
    tree = DyadicTree(1, 4)
    fam = lagom_family(tree, 2)
    assert all(q.level <= 2 for q in fam)
    assert any(q.level == 2 for q in fam)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_lagom_far_root_is_empty(N):
    c = Fr(2) ** (N + 5)
    tree = DyadicTree(1, 3, corner=(c,), side=1)
    assert lagom_family(tree, N) == frozenset()
    ball = Box((-(Fr(2) ** N),), 2 * Fr(2) ** N)
    for q in tree.cubes():
        assert rdist_lagom(tree.box(q), ball) > N


@pytest.mark.parametrize("dim,depth", [(1, 9), (2, 4)])
def test_lagom_mask_matches_box_predicate_and_is_monotone(dim, depth):
    tree = DyadicTree(dim, depth, corner=(-Fr(16),) * dim, side=Fr(32))
    prev = None
    for N in range(1, 6):
        m = lagom_mask(tree, N)
        ref = np.array([is_lagom(tree.box(tree.cube(g)), N) for g in range(tree.n_cubes)])
        np.testing.assert_array_equal(m, ref)
        if prev is not None:
            assert np.all(m[prev])
        prev = m
