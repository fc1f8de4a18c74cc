"""Finite dyadic trees and the cube-pair geometry used throughout.

Leaves are stored in Morton (Z-order): the cube at level ``l`` with Morton
index ``k`` covers the leaf range ``[k * b**(L-l), (k+1) * b**(L-l))`` where
``b = 2**n``.  Every per-cube quantity lives in a flat array indexed by the
global id ``offset(l) + k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import ResourceCapError
from .kernels import level_offsets

DEFAULT_LEAF_CAP = 10**6


def as_fraction(x) -> Fraction:
    """Exact conversion; floats are accepted only when they are dyadic."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise ValueError(f"non-finite coordinate {x!r}")
        return Fraction(float(x))
    raise TypeError(f"cannot interpret {x!r} as a rational")


def _is_dyadic(q: Fraction) -> bool:
    d = q.denominator
    return d & (d - 1) == 0


@dataclass(frozen=True)
class Box:
    """Half-open axis-parallel cube ``corner + [0, side)^n``, exact."""

    corner: tuple[Fraction, ...]
    side: Fraction

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(as_fraction(c) for c in self.corner))
        object.__setattr__(self, "side", as_fraction(self.side))
        if self.side <= 0:
            raise ValueError("box side must be positive")

    @property
    def dim(self) -> int:
        return len(self.corner)

    @property
    def hi(self) -> tuple[Fraction, ...]:
        return tuple(c + self.side for c in self.corner)

    @property
    def center(self) -> tuple[Fraction, ...]:
        return tuple(c + self.side / 2 for c in self.corner)

    @property
    def volume(self) -> Fraction:
        return self.side ** self.dim

    def contains(self, other: "Box") -> bool:
        return all(a <= b and b + other.side <= a + self.side for a, b in zip(self.corner, other.corner))

    def dilate(self, factor) -> "Box":
        """Concentric cube with side multiplied by ``factor``."""
        factor = as_fraction(factor)
        s = self.side * factor
        return Box(tuple(c - s / 2 for c in self.center), s)

    def __str__(self):
        if self.dim == 1:
            return f"[{self.corner[0]},{self.corner[0] + self.side})"
        return "x".join(f"[{c},{c + self.side})" for c in self.corner)


@dataclass(frozen=True, order=True)
class CubeId:
    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))


def morton_encode(index: Sequence[int], level: int) -> int:
    n = len(index)
    k = 0
    for b in range(level):
        for i, c in enumerate(index):
            k |= ((c >> b) & 1) << (b * n + i)
    return k


def morton_decode(k: int, dim: int, level: int) -> tuple[int, ...]:
    out = [0] * dim
    for b in range(level):
        for i in range(dim):
            out[i] |= ((k >> (b * dim + i)) & 1) << b
    return tuple(out)


def morton_decode_array(ks: np.ndarray, dim: int, level: int) -> np.ndarray:
    ks = np.asarray(ks, dtype=np.int64)
    out = np.zeros((ks.size, dim), dtype=np.int64)
    for b in range(level):
        for i in range(dim):
            out[:, i] |= ((ks >> (b * dim + i)) & 1) << b
    return out


class DyadicTree:
    """Dyadic grid of depth ``depth`` below a single root cube."""

    def __init__(self, dim: int, depth: int, corner=None, side=1, leaf_cap: int | None = DEFAULT_LEAF_CAP):
        if int(dim) < 1 or int(depth) < 1:
            raise ValueError("dimension and depth must be positive")
        self.dim = int(dim)
        self.depth = int(depth)
        if corner is None:
            corner = (0,) * self.dim
        if len(corner) != self.dim:
            raise ValueError("root corner has the wrong dimension")
        self.root_box = Box(tuple(corner), side)
        if not all(_is_dyadic(c) for c in self.root_box.corner) or not _is_dyadic(self.root_box.side):
            raise ValueError("root box must have dyadic-rational corner and side")
        if leaf_cap is not None and 2 ** (self.dim * self.depth) > leaf_cap:
            raise ResourceCapError(
                f"tree with 2^{self.dim * self.depth} leaves exceeds the leaf cap {leaf_cap}"
            )
        self.bits = self.dim
        self.branch = 1 << self.dim
        self.n_leaves = 1 << (self.dim * self.depth)
        self.offsets = level_offsets(self.dim, self.depth)
        self.n_cubes = int(self.offsets[-1])

    # identity -------------------------------------------------------------
    def _key(self):
        return (self.dim, self.depth, self.root_box)

    def __eq__(self, other):
        return isinstance(other, DyadicTree) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"DyadicTree(dim={self.dim}, depth={self.depth}, root={self.root_box})"

    # indexing -------------------------------------------------------------
    def n_at_level(self, level: int) -> int:
        return 1 << (self.dim * level)

    def level_slice(self, level: int) -> slice:
        return slice(int(self.offsets[level]), int(self.offsets[level + 1]))

    @property
    def root(self) -> CubeId:
        return CubeId(0, (0,) * self.dim)

    def check(self, q: CubeId) -> None:
        if not 0 <= q.level <= self.depth or len(q.index) != self.dim:
            raise ValueError(f"{q} is not a cube of {self}")
        if any(not 0 <= i < (1 << q.level) for i in q.index):
            raise ValueError(f"{q} is not a cube of {self}")

    def morton(self, q: CubeId) -> int:
        return morton_encode(q.index, q.level)

    def gid(self, q: CubeId) -> int:
        self.check(q)
        return int(self.offsets[q.level]) + self.morton(q)

    def cube(self, gid: int) -> CubeId:
        gid = int(gid)
        if not 0 <= gid < self.n_cubes:
            raise ValueError(f"global id {gid} out of range")
        level = int(np.searchsorted(self.offsets, gid, side="right")) - 1
        return CubeId(level, morton_decode(gid - int(self.offsets[level]), self.dim, level))

    @cached_property
    def gid_level(self) -> np.ndarray:
        out = np.empty(self.n_cubes, dtype=np.int64)
        for l in range(self.depth + 1):
            out[self.level_slice(l)] = l
        return out

    @cached_property
    def gid_morton(self) -> np.ndarray:
        return np.arange(self.n_cubes, dtype=np.int64) - self.offsets[self.gid_level]

    def parent(self, q: CubeId) -> CubeId:
        if q.level == 0:
            raise ValueError("the root has no parent")
        return CubeId(q.level - 1, tuple(i >> 1 for i in q.index))

    def children(self, q: CubeId) -> list[CubeId]:
        if q.level >= self.depth:
            return []
        k = self.morton(q)
        return [CubeId(q.level + 1, morton_decode((k << self.dim) | j, self.dim, q.level + 1)) for j in range(self.branch)]

    def parent_gid(self, gids: np.ndarray) -> np.ndarray:
        gids = np.asarray(gids, dtype=np.int64)
        lv = self.gid_level[gids]
        if np.any(lv == 0):
            raise ValueError("the root has no parent")
        k = gids - self.offsets[lv]
        return self.offsets[lv - 1] + (k >> self.dim)

    def cubes(self, level: int | None = None) -> Iterator[CubeId]:
        levels = range(self.depth + 1) if level is None else [level]
        for l in levels:
            for k in range(self.n_at_level(l)):
                yield CubeId(l, morton_decode(k, self.dim, l))

    def leaf_range(self, q: CubeId) -> tuple[int, int]:
        k = self.morton(q)
        w = 1 << (self.dim * (self.depth - q.level))
        return k * w, (k + 1) * w

    def leaf_range_gid(self, gid: int) -> tuple[int, int]:
        l = int(self.gid_level[gid])
        k = int(gid) - int(self.offsets[l])
        w = 1 << (self.dim * (self.depth - l))
        return k * w, (k + 1) * w

    def ancestor_gids(self, leaf: int) -> np.ndarray:
        l = np.arange(self.depth + 1)
        return self.offsets[l] + (int(leaf) >> (self.dim * (self.depth - l)))

    # geometry -------------------------------------------------------------
    def side(self, level: int) -> Fraction:
        return self.root_box.side / (1 << level)

    @property
    def leaf_side(self) -> Fraction:
        return self.side(self.depth)

    @property
    def leaf_volume(self) -> Fraction:
        return self.leaf_side ** self.dim

    def box(self, q: CubeId) -> Box:
        self.check(q)
        s = self.side(q.level)
        return Box(tuple(c + i * s for c, i in zip(self.root_box.corner, q.index)), s)

    def level_coords(self, level: int) -> np.ndarray:
        """Integer index vectors of the cubes of one level, Morton order."""
        return morton_decode_array(np.arange(self.n_at_level(level)), self.dim, level)

    @cached_property
    def unit(self) -> Fraction:
        """Common dyadic unit making the leaf side and root corner integral."""
        den = max([self.leaf_side.denominator] + [c.denominator for c in self.root_box.corner])
        return Fraction(1, den)

    def int_side(self, level: int) -> int:
        v = self.side(level) / self.unit
        assert v.denominator == 1
        return int(v)

    @cached_property
    def int_root_corner(self) -> np.ndarray:
        return np.array([int(c / self.unit) for c in self.root_box.corner], dtype=np.int64)

    def int_corners(self, level: int) -> np.ndarray:
        """Cube corners at one level in units of :attr:`unit` (exact integers)."""
        return self.int_root_corner + self.level_coords(level) * self.int_side(level)

    @cached_property
    def gid_int_corner(self) -> np.ndarray:
        out = np.empty((self.n_cubes, self.dim), dtype=np.int64)
        for l in range(self.depth + 1):
            out[self.level_slice(l)] = self.int_corners(l)
        return out

    @cached_property
    def gid_int_side(self) -> np.ndarray:
        return np.array([self.int_side(l) for l in range(self.depth + 1)], dtype=np.int64)[self.gid_level]

    def leaf_centers(self) -> np.ndarray:
        u = float(self.unit)
        return (self.int_corners(self.depth) + self.int_side(self.depth) / 2.0) * u

    def leaves_in_box(self, box: Box) -> np.ndarray:
        """Boolean mask of leaves whose centres lie in ``box`` (half-open)."""
        u = self.unit
        lo = np.array([(c / u) for c in box.corner], dtype=object)
        hi = np.array([(c + box.side) / u for c in box.corner], dtype=object)
        cen = self.int_corners(self.depth).astype(object) * 2 + self.int_side(self.depth)
        mask = np.ones(self.n_leaves, dtype=bool)
        for i in range(self.dim):
            c = cen[:, i]
            mask &= np.array([2 * lo[i] <= v < 2 * hi[i] for v in c], dtype=bool)
        return mask

    def box_is_union_of_leaves(self, box: Box) -> bool:
        ls = self.leaf_side
        return (box.side / ls).denominator == 1 and all(
            ((c - r) / ls).denominator == 1 for c, r in zip(box.corner, self.root_box.corner)
        )


def build_tree(n: int, L: int, root_box: Box | None = None, leaf_cap: int | None = DEFAULT_LEAF_CAP) -> DyadicTree:
    if root_box is None:
        return DyadicTree(n, L, leaf_cap=leaf_cap)
    return DyadicTree(n, L, root_box.corner, root_box.side, leaf_cap=leaf_cap)


# --------------------------------------------------------------------------
# pair geometry
# --------------------------------------------------------------------------

def _as_box(tree: DyadicTree | None, q) -> Box:
    if isinstance(q, Box):
        return q
    if tree is None:
        raise TypeError("a tree is needed to realize a CubeId")
    return tree.box(q)


def box_distance_sq(a: Box, b: Box) -> Fraction:
    """Squared Euclidean distance between the closures of two boxes."""
    d = Fraction(0)
    for x, y in zip(a.corner, b.corner):
        gap = max(Fraction(0), x - (y + b.side), y - (x + a.side))
        d += gap * gap
    return d


def bracket(a: Box, b: Box) -> Box:
    """Smallest cube containing both boxes, centred as close to 0 as possible.

    Each axis is independent: the side is forced by the widest extent and the
    centre coordinate is the point of the admissible interval closest to 0,
    which makes the minimizer of |c| unique.
    """
    lo = [min(x, y) for x, y in zip(a.corner, b.corner)]
    hi = [max(x + a.side, y + b.side) for x, y in zip(a.corner, b.corner)]
    s = max(h - l for l, h in zip(lo, hi))
    corner = []
    for l, h in zip(lo, hi):
        cmin, cmax = h - s / 2, l + s / 2
        c = min(max(Fraction(0), cmin), cmax)
        corner.append(c - s / 2)
    return Box(tuple(corner), s)


def eccentricity(a: Box, b: Box) -> Fraction:
    return min(a.side, b.side) / max(a.side, b.side)


def rdist_geom(a: Box, b: Box) -> Fraction:
    """Relative distance l(<a,b>) / max(l(a), l(b)); always >= 1."""
    return bracket(a, b).side / max(a.side, b.side)


def rdist_lagom(a: Box, b: Box) -> float:
    """Additive relative distance 1 + dist(a, b) / max(l(a), l(b))."""
    return 1.0 + math.sqrt(box_distance_sq(a, b)) / float(max(a.side, b.side))


def inner_boundary(q: Box) -> list[tuple[int, Fraction]]:
    """Hyperplane pieces making up the union of the children's boundaries.

    Each entry ``(axis, t)`` stands for ``{x in closure(q): x[axis] = t}``.
    """
    return [(i, t) for i in range(q.dim) for t in (q.corner[i], q.corner[i] + q.side / 2, q.corner[i] + q.side)]


def inner_boundary_distance_sq(j: Box, q: Box) -> Fraction:
    """Exact squared distance from the closure of ``j`` to the inner boundary of ``q``."""
    best = None
    for axis, t in inner_boundary(q):
        d = Fraction(0)
        for i in range(q.dim):
            lo, hi = j.corner[i], j.corner[i] + j.side
            if i == axis:
                g = max(Fraction(0), lo - t, t - hi)
            else:
                g = max(Fraction(0), lo - (q.corner[i] + q.side), q.corner[i] - hi)
            d += g * g
        if best is None or d < best:
            best = d
    return best


def inrdist(outer: Box, inner: Box) -> float | None:
    """Inner relative distance 1 + dist(inner, D_outer) / l(inner), or None if inner is not in 3*outer."""
    if not outer.dilate(3).contains(inner):
        return None
    return 1.0 + math.sqrt(inner_boundary_distance_sq(inner, outer)) / float(inner.side)


@dataclass(frozen=True)
class GeometrySummary:
    ec: Fraction
    rdist_geom: Fraction
    rdist_lagom: float
    bracket: Box
    inrdist: float | None


def geometry(tree: DyadicTree | None, i, j) -> GeometrySummary:
    """Pair statistics of two cubes; ``inrdist`` is measured relative to the first."""
    a, b = _as_box(tree, i), _as_box(tree, j)
    return GeometrySummary(
        ec=eccentricity(a, b),
        rdist_geom=rdist_geom(a, b),
        rdist_lagom=rdist_lagom(a, b),
        bracket=bracket(a, b),
        inrdist=inrdist(a, b),
    )


# --------------------------------------------------------------------------
# lagom cubes
# --------------------------------------------------------------------------

def origin_ball_side(N: int) -> Fraction:
    """Side length attributed to the ball of radius 2**N (its diameter)."""
    return Fraction(2) ** (N + 1)


def distance_to_origin_ball(box: Box, radius) -> float:
    d2 = Fraction(0)
    for c in box.corner:
        g = max(Fraction(0), c - 0, 0 - (c + box.side))
        d2 += g * g
    return max(0.0, math.sqrt(d2) - float(radius))


def is_lagom(box: Box, N: int) -> bool:
    if N < 1:
        raise ValueError("N must be a positive integer")
    two_n = Fraction(2) ** N
    if not (1 / two_n <= box.side <= two_n):
        return False
    d2 = Fraction(0)
    for c in box.corner:
        g = max(Fraction(0), c, -(c + box.side))
        d2 += g * g
    slack = two_n + (N - 1) * max(box.side, origin_ball_side(N))
    return d2 <= slack * slack


def lagom_mask(tree: DyadicTree, N: int) -> np.ndarray:
    """Boolean per-gid mask of the tree cubes belonging to the lagom family D_N."""
    if N < 1:
        raise ValueError("N must be a positive integer")
    out = np.zeros(tree.n_cubes, dtype=bool)
    two_n = Fraction(2) ** N
    for l in range(tree.depth + 1):
        s = tree.side(l)
        if not (1 / two_n <= s <= two_n):
            continue
        u = tree.unit
        corners = tree.int_corners(l).astype(object)
        si = tree.int_side(l)
        g = np.maximum(0, np.maximum(corners, -(corners + si)))
        d2 = (g * g).sum(axis=1)
        slack = (two_n + (N - 1) * max(s, origin_ball_side(N))) / u
        num, den = slack.numerator, slack.denominator
        # d2 <= (num/den)^2  <=>  d2 * den^2 <= num^2
        ok = np.array([int(v) * den * den <= num * num for v in d2], dtype=bool)
        out[tree.level_slice(l)] = ok
    return out


def lagom_family(tree: DyadicTree, N: int) -> frozenset[CubeId]:
    return frozenset(tree.cube(g) for g in np.flatnonzero(lagom_mask(tree, N)))
