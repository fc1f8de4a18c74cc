"""Haar functions adapted to a measure and the associated coefficient calculus.

For a non-root cube Q of positive mass

    h_Q = mu(Q)^{-1/2} (1_Q - mu(Q)/mu(parent) 1_parent).

The system is not orthogonal.  All bulk routines work level by level on the
per-gid arrays of :mod:`sparsedom.dyadic`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dyadic import CubeId, DyadicTree
from .errors import NullCubeError
from .measure import RadonMeasure, StepFunction, _vals, cube_averages


@dataclass(frozen=True)
class HaarFunction:
    cube: CubeId
    realization: StepFunction


def haar_function(q: CubeId, mu: RadonMeasure) -> HaarFunction:
    tree = mu.tree
    if q.level == 0:
        raise ValueError("the root cube has no parent and carries no Haar function")
    mq = mu.mass(q)
    if mq <= 0:
        raise NullCubeError(f"cube {q} has zero mass")
    p = tree.parent(q)
    mp = mu.mass(p)
    v = np.zeros(tree.n_leaves)
    a, b = tree.leaf_range(p)
    v[a:b] = -mq / mp
    a, b = tree.leaf_range(q)
    v[a:b] += 1.0
    return HaarFunction(q, StepFunction(tree, v / np.sqrt(mq)))


def active_mask(mu: RadonMeasure) -> np.ndarray:
    """Per-gid mask of cubes carrying a Haar function (non-root, positive mass)."""
    m = mu.cube_mass > 0
    m = m.copy()
    m[0] = False
    return m


def parent_values(tree: DyadicTree, cube_vals: np.ndarray) -> np.ndarray:
    """Per-gid array holding the value of each cube's parent (root gets NaN)."""
    out = np.full(tree.n_cubes, np.nan)
    for l in range(1, tree.depth + 1):
        out[tree.level_slice(l)] = np.repeat(cube_vals[tree.level_slice(l - 1)], tree.branch)
    return out


def haar_coefficients(f, mu: RadonMeasure) -> np.ndarray:
    """Per-gid <f, h_Q> = mu(Q)^{1/2} (<f>_Q - <f>_parent); zero where inactive."""
    tree = mu.tree
    avg = cube_averages(f, mu)
    pavg = parent_values(tree, avg)
    act = active_mask(mu)
    out = np.zeros(tree.n_cubes)
    out[act] = np.sqrt(mu.cube_mass[act]) * (avg[act] - pavg[act])
    return out


@dataclass
class HaarExpansion:
    mu: RadonMeasure
    coeffs: np.ndarray  # per gid

    @property
    def tree(self):
        return self.mu.tree

    def coefficient(self, q: CubeId) -> float:
        return float(self.coeffs[self.tree.gid(q)])

    @property
    def coefficients(self) -> dict[CubeId, float]:
        act = active_mask(self.mu)
        return {self.tree.cube(g): float(self.coeffs[g]) for g in np.flatnonzero(act)}


def analyze(f, mu: RadonMeasure) -> HaarExpansion:
    return HaarExpansion(mu, haar_coefficients(f, mu))


def synthesis_cube_values(coeffs: np.ndarray, mu: RadonMeasure) -> np.ndarray:
    """Per-gid increments v_P such that sum_Q c_Q h_Q(x) = sum of v over x's ancestors.

    v_P = c_P mu(P)^{-1/2} - sum_{P' child of parent(P)} c_P' mu(P')^{1/2} / mu(parent(P)).
    Inactive cubes contribute nothing.
    """
    tree = mu.tree
    m = mu.cube_mass
    act = active_mask(mu)
    c = np.where(act, coeffs, 0.0)
    alpha = np.zeros(tree.n_cubes)
    alpha[act] = c[act] / np.sqrt(m[act])
    s = np.zeros(tree.n_cubes)
    s[act] = c[act] * np.sqrt(m[act])
    beta = np.zeros(tree.n_cubes)  # per parent
    for l in range(tree.depth):
        sl = tree.level_slice(l)
        tot = s[tree.level_slice(l + 1)].reshape(-1, tree.branch).sum(axis=1)
        mp = m[sl]
        beta[sl] = np.where(mp > 0, tot / np.where(mp > 0, mp, 1.0), 0.0)
    v = alpha - np.nan_to_num(parent_values(tree, beta), nan=0.0)
    v[0] = 0.0
    return v


def synthesize(expansion: HaarExpansion, multiplier=None) -> StepFunction:
    """sum_Q m_Q c_Q h_Q over active cubes (m = 1 if omitted)."""
    c = expansion.coeffs if multiplier is None else expansion.coeffs * multiplier
    v = synthesis_cube_values(c, expansion.mu)
    tot, _ = kernels.ancestor_scan(v, expansion.tree.bits, expansion.tree.depth)
    return StepFunction(expansion.tree, tot)


def analysis_matrix(mu: RadonMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Dense matrix whose rows are the leaf values of h_Q for active Q.

    Returns ``(gids, H)``; ``<f, h_Q> = H @ (f * mass)``.
    """
    tree = mu.tree
    gids = np.flatnonzero(active_mask(mu))
    H = np.zeros((gids.size, tree.n_leaves))
    m = mu.cube_mass
    par = tree.parent_gid(gids) if gids.size else gids
    for r, (g, pg) in enumerate(zip(gids, par)):
        a, b = tree.leaf_range_gid(pg)
        H[r, a:b] = -m[g] / m[pg]
        a, b = tree.leaf_range_gid(g)
        H[r, a:b] += 1.0
        H[r] /= np.sqrt(m[g])
    return gids, H


def product_decomposition(f, mu: RadonMeasure, q: CubeId) -> tuple[StepFunction, StepFunction]:
    """Split <f,h_Q>h_Q as <f>_Q 1_Q + a_Q and return both pieces."""
    tree = mu.tree
    p = tree.parent(q)
    mq, mp = mu.mass(q), mu.mass(p)
    if mq <= 0:
        raise NullCubeError(f"cube {q} has zero mass")
    v = _vals(f)
    aq = float((v * mu.leaf_mass)[slice(*tree.leaf_range(q))].sum() / mq)
    ap = float((v * mu.leaf_mass)[slice(*tree.leaf_range(p))].sum() / mp)
    one_q = StepFunction.indicator(tree, q).values
    one_p = StepFunction.indicator(tree, p).values
    first = aq * one_q
    rest = -(mq / mp) * aq * one_p - ap * one_q + (mq / mp) * ap * one_p
    return StepFunction(tree, first), StepFunction(tree, rest)


def delta(f, mu: RadonMeasure, q: CubeId, form: str = "averages") -> StepFunction:
    """Martingale difference on Q.

    ``form="averages"`` sums (<f>_R - <f>_Q) 1_R over children; ``form="haar"``
    sums <f,h_R> h_R over children of positive mass.
    """
    tree = mu.tree
    if mu.mass(q) <= 0:
        raise NullCubeError(f"cube {q} has zero mass")
    out = np.zeros(tree.n_leaves)
    if form == "averages":
        from .measure import average

        aq = average(f, mu, q)
        for r in tree.children(q):
            if mu.mass(r) > 0:
                a, b = tree.leaf_range(r)
                out[a:b] = average(f, mu, r) - aq
    elif form == "haar":
        v = _vals(f)
        for r in tree.children(q):
            if mu.mass(r) > 0:
                h = haar_function(r, mu).realization.values
                out += float((v * h * mu.leaf_mass).sum()) * h
    else:
        raise ValueError(f"unknown form {form!r}")
    return StepFunction(tree, out)


@dataclass(frozen=True)
class FrameBounds:
    lower: float
    upper: float
    dimension: int
    degenerate: bool


def frame_bounds(mu: RadonMeasure) -> FrameBounds:
    """Extremal values of (sum <f,h_Q>^2)^{1/2} / ||f||_2 on mean-zero f.

    Computed as eigenvalues of the frame operator on the mean-zero subspace of
    L^2(mu) restricted to leaves of positive mass.
    """
    tree = mu.tree
    if mu.total <= 0:
        raise ValueError("the zero measure has no Haar system")
    pos = mu.leaf_mass > 0
    m = mu.leaf_mass[pos]
    k = int(pos.sum())
    if k <= 1:
        return FrameBounds(0.0, 0.0, 0, True)
    _, H = analysis_matrix(mu)
    H = H[:, pos]
    # isometry L^2(mu) -> l^2: f = g / sqrt(m); analysis becomes H diag(sqrt m)
    A = H * np.sqrt(m)[None, :]
    # orthonormal basis of the mean-zero subspace (orthogonal to sqrt(m))
    u = np.sqrt(m) / np.sqrt(m.sum())
    basis = np.linalg.qr(np.column_stack([u, np.eye(k)[:, : k - 1]]))[0][:, 1:]
    s = np.linalg.svd(A @ basis, compute_uv=False)
    return FrameBounds(float(s.min()), float(s.max()), k - 1, False)
