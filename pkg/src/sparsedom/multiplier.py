"""Haar multipliers, maximal truncations and empirical weak-type constants."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .dyadic import CubeId, DyadicTree
from .errors import ConsistencyError
from .haar import active_mask, analysis_matrix, haar_coefficients, synthesis_cube_values
from .measure import RadonMeasure, StepFunction, _vals


class CoefficientField:
    """Real coefficient per tree cube (per-gid array)."""

    def __init__(self, tree: DyadicTree, values):
        v = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if v.size != tree.n_cubes:
            raise ValueError(f"expected {tree.n_cubes} coefficients, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficients must be finite")
        v.setflags(write=False)
        self.tree = tree
        self.values = v

    @classmethod
    def constant(cls, tree, c=1.0):
        return cls(tree, np.full(tree.n_cubes, float(c)))

    @classmethod
    def from_mapping(cls, tree, mapping: dict, default=0.0):
        v = np.full(tree.n_cubes, float(default))
        for q, x in mapping.items():
            v[tree.gid(q)] = x
        return cls(tree, v)

    @classmethod
    def from_function(cls, tree, fn: Callable[[CubeId], float]):
        return cls(tree, [fn(tree.cube(g)) for g in range(tree.n_cubes)])

    @classmethod
    def from_profile(cls, tree, profile: "DecayProfile"):
        return cls(tree, profile.evaluate(tree))

    def __getitem__(self, q: CubeId) -> float:
        return float(self.values[self.tree.gid(q)])

    def running_sup(self) -> np.ndarray:
        """Per-gid sup of |eps| over strict dyadic descendants (0 on leaves)."""
        tree = self.tree
        a = np.abs(self.values)
        out = np.zeros(tree.n_cubes)
        for l in range(tree.depth - 1, -1, -1):
            ch = tree.level_slice(l + 1)
            best = np.maximum(a[ch], out[ch]).reshape(-1, tree.branch).max(axis=1)
            out[tree.level_slice(l)] = best
        return out

    def inclusive_sup(self) -> np.ndarray:
        """Per-gid sup of |eps| over the cube and its descendants."""
        return np.maximum(np.abs(self.values), self.running_sup())

    def restricted(self, mask) -> "CoefficientField":
        return CoefficientField(self.tree, np.where(mask, self.values, 0.0))


# --------------------------------------------------------------------------
# decay profiles
# --------------------------------------------------------------------------

def _interp(table, x):
    xs, ys = np.asarray(table["x"], float), np.asarray(table["y"], float)
    return np.interp(x, xs, ys, left=ys[0], right=ys[-1])


@dataclass
class DecayProfile:
    """Coefficient field generator eps_Q = small(s) * large(s) * centre(|c(Q)|), s = log2 side.

    ``kind="geometric"`` uses ``small(s) = rho_small**max(0,-s)``,
    ``large(s) = rho_large**max(0,s)`` and ``centre(d) = (1+d)**(-centre_rate)``.
    ``kind="table"`` interpolates sampled maps given as ``{"x": [...], "y": [...]}``.
    """

    kind: str = "geometric"
    params: dict = field(default_factory=dict)

    def maps(self):
        if self.kind == "geometric":
            rs = float(self.params.get("rho_small", 1.0))
            rl = float(self.params.get("rho_large", 1.0))
            cr = float(self.params.get("centre_rate", 0.0))
            amp = float(self.params.get("amplitude", 1.0))
            return (
                lambda s: amp * rs ** np.maximum(0.0, -np.asarray(s, float)),
                lambda s: rl ** np.maximum(0.0, np.asarray(s, float)),
                lambda d: (1.0 + np.asarray(d, float)) ** (-cr),
            )
        if self.kind == "table":
            one = {"x": [0.0], "y": [1.0]}
            sm = self.params.get("small", one)
            lg = self.params.get("large", one)
            ce = self.params.get("centre", one)
            return (lambda s: _interp(sm, s), lambda s: _interp(lg, s), lambda d: _interp(ce, d))
        if self.kind == "constant":
            c = float(self.params.get("value", 1.0))
            return (lambda s: np.full(np.shape(s), c), lambda s: np.ones(np.shape(s)), lambda d: np.ones(np.shape(d)))
        raise ValueError(f"unknown decay profile kind {self.kind!r}")

    def evaluate(self, tree: DyadicTree) -> np.ndarray:
        small, large, centre = self.maps()
        lv = tree.gid_level
        s = math.log2(float(tree.root_box.side)) - lv.astype(float)
        u = float(tree.unit)
        cen = (tree.gid_int_corner + tree.gid_int_side[:, None] / 2.0) * u
        d = np.sqrt((cen**2).sum(axis=1))
        return small(s) * large(s) * centre(d)

    def sampled(self, s_grid, d_grid) -> "DecayProfile":
        small, large, centre = self.maps()
        s_grid = np.asarray(s_grid, float)
        d_grid = np.asarray(d_grid, float)
        return DecayProfile(
            "table",
            {
                "small": {"x": s_grid.tolist(), "y": small(s_grid).tolist()},
                "large": {"x": s_grid.tolist(), "y": large(s_grid).tolist()},
                "centre": {"x": d_grid.tolist(), "y": centre(d_grid).tolist()},
            },
        )

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": self.params}

    @classmethod
    def from_json(cls, obj: dict) -> "DecayProfile":
        return cls(obj.get("kind", "geometric"), dict(obj.get("params", {})))


# --------------------------------------------------------------------------
# multipliers
# --------------------------------------------------------------------------

def _eps(tree, eps) -> np.ndarray:
    if isinstance(eps, CoefficientField):
        if eps.tree != tree:
            raise ValueError("coefficient field lives on a different tree")
        return eps.values
    v = np.asarray(eps, dtype=np.float64)
    if v.shape != (tree.n_cubes,):
        raise ValueError("coefficient array does not match the tree")
    return v


def multiplier_increments(f, eps, mu: RadonMeasure) -> np.ndarray:
    """Per-gid increments whose ancestor partial sums are the truncations of Tf."""
    c = haar_coefficients(f, mu) * _eps(mu.tree, eps)
    return synthesis_cube_values(c, mu)


def apply_multiplier(f, eps, mu: RadonMeasure) -> StepFunction:
    """Tf = sum_Q eps_Q <f,h_Q> h_Q."""
    v = multiplier_increments(f, eps, mu)
    tot, _ = kernels.ancestor_scan(v, mu.tree.bits, mu.tree.depth)
    return StepFunction(mu.tree, tot)


def apply_tmax(f, eps, mu: RadonMeasure) -> StepFunction:
    """T^max f(x) = sup over cubes Q containing x of |sum_{P: parent(P) strictly contains Q} ...|."""
    v = multiplier_increments(f, eps, mu)
    _, mx = kernels.ancestor_scan(v, mu.tree.bits, mu.tree.depth)
    return StepFunction(mu.tree, mx)


def truncation_table(f, eps, mu: RadonMeasure) -> np.ndarray:
    """Leaf x level matrix S with S[x, k] the truncation through level k (S[:, 0] = 0)."""
    v = multiplier_increments(f, eps, mu)
    return np.cumsum(kernels.ancestor_table(v, mu.tree.bits, mu.tree.depth), axis=1)


def localized_tmax_table(S: np.ndarray) -> np.ndarray:
    """TM[x, q] = max_{k >= q} |S[x, k] - S[x, q]|: maximal truncation of T_Q at x, Q of level q."""
    L1 = S.shape[1]
    out = np.zeros_like(S)
    for q in range(L1):
        out[:, q] = np.abs(S[:, q:] - S[:, q : q + 1]).max(axis=1)
    return out


def multiplier_matrix(eps, mu: RadonMeasure) -> np.ndarray:
    """Dense matrix of T acting on leaf values: (Tf) = A @ f."""
    gids, H = analysis_matrix(mu)
    e = _eps(mu.tree, eps)[gids]
    return H.T @ (e[:, None] * H * mu.leaf_mass[None, :])


# --------------------------------------------------------------------------
# weak type
# --------------------------------------------------------------------------

def level_set_sup(values, masses, exact=False, grid_points=64) -> float:
    """sup over lambda of lambda * mass{|values| > lambda}.

    ``exact=False`` uses a geometric lambda grid spanning the nonzero range of
    |values|; ``exact=True`` evaluates at every value threshold.
    """
    v = np.abs(np.asarray(values, float))
    m = np.asarray(masses, float)
    if exact:
        return float(kernels.weak_sup(v, m))
    nz = v[(v > 0) & (m > 0)]
    if nz.size == 0:
        return 0.0
    lo, hi = nz.min(), nz.max()
    grid = np.geomspace(lo, hi, grid_points) if hi > lo else np.array([lo])
    # strictly below each threshold so that lambda = value is captured from the left
    grid = grid * (1 - 1e-12)
    order = np.sort(v)
    csum = np.concatenate([[0.0], np.cumsum(m[np.argsort(v, kind="stable")])])
    idx = np.searchsorted(order, grid, side="right")
    above = csum[-1] - csum[idx]
    return float(np.max(grid * above))


@dataclass
class WeakTypeReport:
    max: float
    mean: float
    per_trial: list


def weak_type_estimate(op: Callable, mu: RadonMeasure, trials: int, rng=None, scale: float = 1.0,
                       sampler: Callable | None = None, exact: bool = False) -> WeakTypeReport:
    """Empirical sup of lambda mu{|op f| > lambda} / (scale ||f||_1) over random f."""
    if trials < 1:
        raise ValueError("trials must be positive")
    from .instances import random_function

    rng = np.random.default_rng(rng)
    out = []
    for _ in range(trials):
        f = sampler(rng) if sampler is not None else random_function(mu.tree, rng)
        g = op(f)
        gv = _vals(g)
        norm = float(np.sum(np.abs(_vals(f)) * mu.leaf_mass))
        ws = level_set_sup(gv, mu.leaf_mass, exact=exact)
        if ws == 0:
            out.append(0.0)
            continue
        if scale <= 0 or norm <= 0:
            raise ConsistencyError("operator output is nonzero but the normalization vanishes")
        out.append(ws / (scale * norm))
    return WeakTypeReport(float(max(out)), float(np.mean(out)), out)
