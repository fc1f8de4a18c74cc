"""Measures, step functions, weights, averages and dyadic maximal operators."""
from __future__ import annotations

from fractions import Fraction
from functools import cached_property

import numpy as np

from . import kernels
from .dyadic import CubeId, DyadicTree
from .errors import NullCubeError


class StepFunction:
    """Leaf-constant real function on a dyadic tree (leaves in Morton order)."""

    def __init__(self, tree: DyadicTree, values):
        v = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if v.size != tree.n_leaves:
            raise ValueError(f"expected {tree.n_leaves} leaf values, got {v.size}")
        v.setflags(write=False)
        self.tree = tree
        self.values = v

    @classmethod
    def constant(cls, tree, c=1.0):
        return cls(tree, np.full(tree.n_leaves, float(c)))

    @classmethod
    def indicator(cls, tree, cube: CubeId, c=1.0):
        v = np.zeros(tree.n_leaves)
        a, b = tree.leaf_range(cube)
        v[a:b] = c
        return cls(tree, v)

    @classmethod
    def from_grid(cls, tree, grid):
        """Build from an array of shape ``(2**L,)*n`` indexed by integer coordinates."""
        grid = np.asarray(grid, dtype=np.float64)
        coords = tree.level_coords(tree.depth)
        return cls(tree, grid[tuple(coords.T)])

    def to_grid(self) -> np.ndarray:
        side = 1 << self.tree.depth
        out = np.empty((side,) * self.tree.dim)
        out[tuple(self.tree.level_coords(self.tree.depth).T)] = self.values
        return out

    def _wrap(self, v):
        return StepFunction(self.tree, v)

    def _other(self, o):
        if isinstance(o, StepFunction):
            if o.tree != self.tree:
                raise ValueError("step functions live on different trees")
            return o.values
        return o

    def __add__(self, o):
        return self._wrap(self.values + self._other(o))

    __radd__ = __add__

    def __sub__(self, o):
        return self._wrap(self.values - self._other(o))

    def __rsub__(self, o):
        return self._wrap(self._other(o) - self.values)

    def __mul__(self, o):
        return self._wrap(self.values * self._other(o))

    __rmul__ = __mul__

    def __truediv__(self, o):
        return self._wrap(self.values / self._other(o))

    def __neg__(self):
        return self._wrap(-self.values)

    def __abs__(self):
        return self._wrap(np.abs(self.values))

    def __repr__(self):
        return f"StepFunction({self.tree!r}, n={self.values.size})"


class Weight(StepFunction):
    """Strictly positive step function."""

    def __init__(self, tree, values):
        super().__init__(tree, values)
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise ValueError("weights must be finite and strictly positive")

    def dual(self, p) -> "Weight":
        """sigma = w**(1 - p')."""
        return Weight(self.tree, self.values ** (1.0 - float(dual_exponent(p))))


class RadonMeasure:
    """Nonnegative mass per leaf."""

    def __init__(self, tree: DyadicTree, leaf_mass):
        m = np.array(leaf_mass, dtype=np.float64, copy=True).reshape(-1)
        if m.size != tree.n_leaves:
            raise ValueError(f"expected {tree.n_leaves} leaf masses, got {m.size}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("leaf masses must be finite and nonnegative")
        m.setflags(write=False)
        self.tree = tree
        self.leaf_mass = m

    @classmethod
    def uniform(cls, tree, total=None):
        """Lebesgue measure restricted to the root (or normalized to ``total``)."""
        per = float(tree.leaf_volume) if total is None else float(total) / tree.n_leaves
        return cls(tree, np.full(tree.n_leaves, per))

    @cached_property
    def cube_mass(self) -> np.ndarray:
        out = kernels.cube_sums(self.leaf_mass, self.tree.bits, self.tree.depth)
        out.setflags(write=False)
        return out

    def mass(self, q: CubeId) -> float:
        return float(self.cube_mass[self.tree.gid(q)])

    @property
    def total(self) -> float:
        return float(self.cube_mass[0])

    @cached_property
    def positive(self) -> np.ndarray:
        """Per-gid mask of cubes with positive mass."""
        return self.cube_mass > 0

    def weighted(self, w: StepFunction) -> "RadonMeasure":
        """The measure w dmu."""
        return RadonMeasure(self.tree, self.leaf_mass * w.values)


def _vals(f) -> np.ndarray:
    return f.values if isinstance(f, StepFunction) else np.asarray(f, dtype=np.float64)


def dual_exponent(p):
    """p' = p/(p-1), exact for rationals."""
    if isinstance(p, (int, Fraction)):
        p = Fraction(p)
        if p <= 1:
            raise ValueError("p must exceed 1")
        return p / (p - 1)
    p = float(p)
    if p <= 1:
        raise ValueError("p must exceed 1")
    return p / (p - 1.0)


# --------------------------------------------------------------------------
# integrals and averages
# --------------------------------------------------------------------------

def cube_integrals(f, mu: RadonMeasure) -> np.ndarray:
    """Per-gid integrals of f over every cube."""
    return kernels.cube_sums(_vals(f) * mu.leaf_mass, mu.tree.bits, mu.tree.depth)


def cube_averages(f, mu: RadonMeasure) -> np.ndarray:
    """Per-gid averages; NaN on cubes of zero mass."""
    tot = cube_integrals(f, mu)
    m = mu.cube_mass
    out = np.full(m.shape, np.nan)
    pos = m > 0
    out[pos] = tot[pos] / m[pos]
    return out


def integrate(f, mu: RadonMeasure, q: CubeId | None = None) -> float:
    v = _vals(f) * mu.leaf_mass
    if q is None:
        return float(v.sum())
    a, b = mu.tree.leaf_range(q)
    return float(v[a:b].sum())


def average(f, mu: RadonMeasure, q: CubeId) -> float:
    m = mu.mass(q)
    if m <= 0:
        raise NullCubeError(f"cube {q} has zero mass; its average is undefined")
    return integrate(f, mu, q) / m


def lp_norm(f, mu: RadonMeasure, p=2, weight: StepFunction | None = None) -> float:
    """(sum |f|^p w mass)^(1/p); p may be inf."""
    v = np.abs(_vals(f))
    m = mu.leaf_mass if weight is None else mu.leaf_mass * weight.values
    if p == np.inf:
        return float(v[m > 0].max(initial=0.0))
    p = float(p)
    return float((v**p * m).sum() ** (1.0 / p))


# --------------------------------------------------------------------------
# maximal operators
# --------------------------------------------------------------------------

def _ancestor_sup(tree, cube_vals) -> np.ndarray:
    out = kernels.ancestor_max(cube_vals, tree.bits, tree.depth)
    return np.where(np.isneginf(out), 0.0, out)


def maximal_M(f, mu: RadonMeasure) -> StepFunction:
    """Dyadic maximal function sup over cubes containing x of <|f|>_Q."""
    avg = cube_averages(np.abs(_vals(f)), mu)
    return StepFunction(mu.tree, _ancestor_sup(mu.tree, avg))


def child_max_abs(tree: DyadicTree, coeffs: np.ndarray) -> np.ndarray:
    """Per-gid max of |coeff| over the children; NaN on leaves."""
    out = np.full(tree.n_cubes, np.nan)
    a = np.abs(np.asarray(coeffs, dtype=np.float64))
    for l in range(tree.depth):
        ch = a[tree.level_slice(l + 1)].reshape(-1, tree.branch)
        out[tree.level_slice(l)] = ch.max(axis=1)
    return out


def _coeff_array(tree, eps) -> np.ndarray:
    v = eps.values if hasattr(eps, "values") else np.asarray(eps, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (tree.n_cubes,):
        raise ValueError("coefficient field does not match the tree")
    return v


def maximal_M_eps_cube_values(f, mu: RadonMeasure, eps) -> np.ndarray:
    """Per-gid values max_{ch(Q)}|eps| * <|f>|_Q whose ancestor sup is M_eps f."""
    tree = mu.tree
    return child_max_abs(tree, _coeff_array(tree, eps)) * cube_averages(np.abs(_vals(f)), mu)


def maximal_M_eps(f, mu: RadonMeasure, eps) -> StepFunction:
    """sup_{Q containing x} max_{Q' child of Q} |eps_Q'| <|f|>_Q."""
    return StepFunction(mu.tree, _ancestor_sup(mu.tree, maximal_M_eps_cube_values(f, mu, eps)))


def maximal_M_w(f, mu: RadonMeasure, w: StepFunction) -> StepFunction:
    """sup_{Q containing x} w(Q)^{-1} int_Q |f| w dmu."""
    return maximal_M(f, mu.weighted(w))


# --------------------------------------------------------------------------
# A_p characteristics
# --------------------------------------------------------------------------

def _ap_terms(w: StepFunction, mu: RadonMeasure, p) -> np.ndarray:
    """Per-gid <w>_Q <sigma>_Q^{p-1}; NaN on null cubes."""
    pf = float(p)
    sigma = w.values ** (1.0 - float(dual_exponent(p)))
    return cube_averages(w.values, mu) * cube_averages(sigma, mu) ** (pf - 1.0)


def ap_constant(w: StepFunction, mu: RadonMeasure, p) -> float:
    t = _ap_terms(w, mu, p)
    return float(np.nanmax(t)) if np.any(~np.isnan(t)) else 0.0


def eps_q_ap_constant(w: StepFunction, mu: RadonMeasure, p, q, eps) -> float:
    """sup_Q |eps_Q|^q <w>_Q <sigma>_Q^{p-1} over cubes of positive mass."""
    t = _ap_terms(w, mu, p) * np.abs(_coeff_array(mu.tree, eps)) ** float(q)
    return float(np.nanmax(t)) if np.any(~np.isnan(t)) else 0.0
