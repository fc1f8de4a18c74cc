"""Weighted bounds for Haar multipliers, lagom projections and compactness scans."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dyadic import DyadicTree, lagom_mask
from .haar import active_mask, analysis_matrix, haar_coefficients, synthesis_cube_values
from . import kernels
from .measure import (
    RadonMeasure,
    StepFunction,
    Weight,
    _vals,
    ap_constant,
    dual_exponent,
    eps_q_ap_constant,
    lp_norm,
    maximal_M_w,
)
from .multiplier import CoefficientField, _eps, apply_multiplier, multiplier_matrix


# --------------------------------------------------------------------------
# projections onto lagom coefficients
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionSpec:
    tree: DyadicTree
    N: int
    lagom: np.ndarray = field(repr=False)  # per-gid

    @classmethod
    def build(cls, tree: DyadicTree, N: int) -> "ProjectionSpec":
        m = lagom_mask(tree, N)
        m.setflags(write=False)
        return cls(tree, int(N), m)

    @property
    def complement(self) -> np.ndarray:
        """Non-root tree cubes outside the lagom family."""
        c = ~self.lagom
        c[0] = False
        return c

    @property
    def rank(self) -> int:
        return int(self.lagom[1:].sum())


def _synth(c, mu):
    v = synthesis_cube_values(c, mu)
    tot, _ = kernels.ancestor_scan(v, mu.tree.bits, mu.tree.depth)
    return StepFunction(mu.tree, tot)


def project(f, spec: ProjectionSpec, mu: RadonMeasure) -> tuple[StepFunction, StepFunction]:
    """(P_N f, P_N^perp f) by splitting the Haar coefficients."""
    c = haar_coefficients(f, mu)
    return _synth(np.where(spec.lagom, c, 0.0), mu), _synth(np.where(spec.lagom, 0.0, c), mu)


def projection_matrices(spec: ProjectionSpec, mu: RadonMeasure) -> tuple[np.ndarray, np.ndarray]:
    lag = spec.lagom.astype(float)
    return multiplier_matrix(lag, mu), multiplier_matrix(1.0 - lag, mu)


# --------------------------------------------------------------------------
# weighted norms of matrices
# --------------------------------------------------------------------------

def _weighted_factor(w, mu: RadonMeasure):
    wv = np.ones(mu.tree.n_leaves) if w is None else _vals(w)
    d = wv * mu.leaf_mass
    pos = d > 0
    return pos, np.sqrt(d[pos])


def weighted_operator_norm(A: np.ndarray, w, mu: RadonMeasure, src_w=None) -> float:
    """Exact norm of the leaf matrix A from L^2(src_w dmu) to L^2(w dmu).

    ``src_w`` defaults to ``w``.  Leaves of zero mass are null and dropped.
    """
    pos, dt = _weighted_factor(w, mu)
    spos, ds = _weighted_factor(w if src_w is None else src_w, mu)
    B = A[np.ix_(pos, spos)]
    if B.size == 0:
        return 0.0
    B = dt[:, None] * B / ds[None, :]
    if not np.any(B):
        return 0.0
    return float(np.linalg.norm(B, 2))


def weighted_singular_values(A: np.ndarray, w, mu: RadonMeasure) -> np.ndarray:
    pos, d = _weighted_factor(w, mu)
    B = d[:, None] * A[np.ix_(pos, pos)] / d[None, :]
    return np.linalg.svd(B, compute_uv=False)


def weighted_frame_constant(w, mu: RadonMeasure) -> float:
    """kappa(w) = ||synthesis||_{l^2 -> L^2(w)} * ||analysis||_{L^2(w) -> l^2}."""
    _, H = analysis_matrix(mu)
    if H.shape[0] == 0:
        return 0.0
    pos, d = _weighted_factor(w, mu)
    Hp = H[:, pos]
    m = mu.leaf_mass[pos]
    ana = np.linalg.norm(Hp * (m / d)[None, :], 2)
    syn = np.linalg.norm(d[:, None] * Hp.T, 2)
    return float(ana * syn)


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------

def exponent_identity(p) -> tuple[Fraction, Fraction]:
    """Both sides of (p-1)/p' + 2 - p = 1/p in exact arithmetic."""
    p = Fraction(p)
    pp = dual_exponent(p)
    return (p - 1) / pp + 2 - p, 1 / p


def bound_constant(w: Weight, mu: RadonMeasure, p, eps) -> float:
    """[w]_{eps~ A_p} for p >= 2 and [w]_{eps~^{p-1} A_p}^{p'/p} for p < 2."""
    est = CoefficientField(mu.tree, _eps(mu.tree, eps)).running_sup()
    pf = float(p)
    if pf >= 2:
        return eps_q_ap_constant(w, mu, p, 1, est)
    pp = float(dual_exponent(p))
    return eps_q_ap_constant(w, mu, p, pf - 1.0, est) ** (pp / pf)


def dual_constants(w: Weight, mu: RadonMeasure, p, eps) -> tuple[float, float]:
    """([sigma]_{eps~ A_p'}, [w]_{eps~^{p-1} A_p}^{p'/p}) with sigma = w^{1-p'}."""
    est = CoefficientField(mu.tree, _eps(mu.tree, eps)).running_sup()
    pf, pp = float(p), float(dual_exponent(p))
    sigma = w.dual(p)
    lhs = eps_q_ap_constant(sigma, mu, pp, 1, est)
    rhs = eps_q_ap_constant(w, mu, p, pf - 1.0, est) ** (pp / pf)
    return lhs, rhs


def ap_tail_power(p) -> float:
    pf = float(p)
    return max(1.0, float(dual_exponent(p)) / pf)


# --------------------------------------------------------------------------
# Weighted bound check for Haar multipliers
# --------------------------------------------------------------------------

@dataclass
class WeightedBoundReport:
    p: float
    B: float
    ratios: list
    normalized: list
    max_ratio: float
    normalized_max: float
    exact_norm_l2: float | None  # ||T||_{L^2(w)} at p = 2
    duality_gap: float  # relative gap between ||T||_{L^p(w)} and ||T(. sigma)||_{L^p(sigma)->L^p(w)} probes
    sets_disjoint: bool
    sets_mass_ok: bool  # mu(Q_j^k) <= 2 mu(E_j^k)
    min_set_ratio: float  # min mu(E_j^k)/mu(Q_j^k)
    holder_ok: bool
    holder_max: float  # max mu(E) / (w(E)^{1/p} sigma(E)^{1/p'})
    n_sets: int
    skipped: int = 0

    @property
    def exact_ok(self) -> bool:
        return self.sets_disjoint and self.sets_mass_ok and self.holder_ok and self.duality_gap <= 1e-8


def _holder_ratio(mask, mu, w, sigma, p) -> float:
    pf, pp = float(p), float(dual_exponent(p))
    m = float(mu.leaf_mass[mask].sum())
    if m <= 0:
        return 0.0
    we = float((w.values * mu.leaf_mass)[mask].sum())
    se = float((sigma.values * mu.leaf_mass)[mask].sum())
    return m / (we ** (1 / pf) * se ** (1 / pp))


def stopping_sets(result) -> list[np.ndarray]:
    """E_j^k = Q_j^k minus the union of the next-generation cubes, as leaf masks."""
    fam = result.family
    gens = fam.generation
    out = []
    by_gen: dict[int, np.ndarray] = {}
    for i, g in enumerate(gens):
        acc = by_gen.setdefault(g, np.zeros(fam.tree.n_leaves, dtype=bool))
        acc |= fam.leaf_mask(i)
    for i, g in enumerate(gens):
        nxt = by_gen.get(g + 1)
        e = fam.leaf_mask(i).copy()
        if nxt is not None:
            e &= ~nxt
        out.append(e)
    return out


def weighted_bound_check(eps, w: Weight, mu: RadonMeasure, p, trials: int = 20, rng=None,
                         holder_sets: int = 200, f_sparse=None) -> WeightedBoundReport:
    from .instances import random_function
    from .sparse import build_sparse_haar

    pf = float(p)
    if not pf > 1:
        raise ValueError("p must exceed 1")
    rng = np.random.default_rng(rng)
    tree = mu.tree
    e = _eps(tree, eps)
    sigma = w.dual(p)
    B = bound_constant(w, mu, p, e)
    ratios, normed = [], []
    gap = 0.0
    # relative gaps are measured against the coefficient size so that
    # round-off on near-null outputs does not register
    scale = max(float(np.abs(e).max(initial=0.0)), 1e-300)
    skipped = 0
    for _ in range(trials):
        f = random_function(tree, rng)
        nf = lp_norm(f, mu, pf, w)
        if nf <= 0:
            skipped += 1
            continue
        r = lp_norm(apply_multiplier(f, e, mu), mu, pf, w) / nf
        ratios.append(r)
        normed.append(r / B if B > 0 else (0.0 if r == 0 else math.inf))
        # the same probe through L^p(sigma): g = f / sigma, T(g sigma) = T f
        g = f.values / sigma.values
        ng = lp_norm(g, mu, pf, sigma)
        r2 = lp_norm(apply_multiplier(g * sigma.values, e, mu), mu, pf, w) / ng
        gap = max(gap, abs(r2 - r) / max(r, scale))
    exact = None
    if abs(pf - 2.0) < 1e-15:
        A = multiplier_matrix(e, mu)
        exact = weighted_operator_norm(A, w, mu)
        As = A * sigma.values[None, :]
        other = weighted_operator_norm(As, w, mu, src_w=sigma)
        gap = max(gap, abs(other - exact) / max(exact, scale))
    # stopping sets of a constructed sparse family
    fs = f_sparse if f_sparse is not None else random_function(tree, rng)
    res = build_sparse_haar(fs, e, mu)
    sets = stopping_sets(res)
    cover = np.zeros(tree.n_leaves, dtype=int)
    for s in sets:
        cover += s
    disjoint = bool(cover.max(initial=0) <= 1)
    mass_ok = True
    min_ratio = math.inf
    lm = mu.leaf_mass
    for i, s in enumerate(sets):
        mq = float(lm[res.family.leaf_mask(i)].sum())
        me = float(lm[s].sum())
        if mq > 0:
            min_ratio = min(min_ratio, me / mq)
            mass_ok &= mq <= 2 * me * (1 + 1e-12)
    hmax = 0.0
    for s in sets:
        hmax = max(hmax, _holder_ratio(s, mu, w, sigma, p))
    for _ in range(holder_sets):
        s = rng.uniform(size=tree.n_leaves) < rng.uniform(0.05, 0.95)
        hmax = max(hmax, _holder_ratio(s, mu, w, sigma, p))
    if skipped:
        warnings.warn(f"{skipped} trial functions had zero weighted norm and were skipped")
    return WeightedBoundReport(
        p=pf, B=B, ratios=ratios, normalized=normed,
        max_ratio=max(ratios, default=0.0), normalized_max=max(normed, default=0.0),
        exact_norm_l2=exact, duality_gap=gap, sets_disjoint=disjoint, sets_mass_ok=mass_ok,
        min_set_ratio=min_ratio, holder_ok=hmax <= 1 + 1e-12, holder_max=hmax,
        n_sets=len(sets), skipped=skipped,
    )


def maximal_weighted_ratio(w: Weight, mu: RadonMeasure, p, trials: int = 20, rng=None) -> float:
    """max ||M_w f||_{L^p(w)} / ||f||_{L^p(w)} over random f; Doob gives at most p'."""
    from .instances import random_function

    rng = np.random.default_rng(rng)
    best = 0.0
    for _ in range(trials):
        f = random_function(mu.tree, rng)
        nf = lp_norm(f, mu, p, w)
        if nf > 0:
            best = max(best, lp_norm(maximal_M_w(f, mu, w), mu, p, w) / nf)
    return best


# --------------------------------------------------------------------------
# compactness
# --------------------------------------------------------------------------

@dataclass
class CompactnessRow:
    N: int
    tail_sup: float
    ap_power: float
    bound: float
    tail_norm_empirical: float
    tail_norm_exact: float
    projected_norm: float
    rank: int
    sv_tail: float
    bound_ok: bool
    sv_ok: bool


@dataclass
class CompactnessReport:
    p: float
    ap: float
    frame_constant: float
    rows: list
    tail_sup_nonincreasing: bool
    tail_norm_nonincreasing: bool
    decays: bool
    weight_id: str = ""

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    @property
    def all_bounds_ok(self) -> bool:
        return all(r.bound_ok for r in self.rows)


def _lp_ratio_probe(A, w, mu, p, trials, rng):
    from .instances import random_function

    best = 0.0
    for _ in range(trials):
        f = random_function(mu.tree, rng).values
        nf = lp_norm(f, mu, p, w)
        if nf > 0:
            best = max(best, lp_norm(A @ f, mu, p, w) / nf)
    return best


def compactness_scan(op, w: Weight, mu: RadonMeasure, p, N_list, trials: int = 10, rng=None,
                     weight_id: str = "") -> CompactnessReport:
    """Tail diagnostics along N for a coefficient field or a kernel operator.

    For coefficient fields the tail operator is the multiplier restricted to
    the non-lagom cubes.  Kernel operators supply ``tail_sup(N)`` and
    ``tail_matrix(N)`` themselves.
    """
    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be strictly increasing")
    rng = np.random.default_rng(rng)
    tree = mu.tree
    w = w if w is not None else Weight(tree, np.ones(tree.n_leaves))
    ap = ap_constant(w, mu, p)
    power = ap_tail_power(p)
    kappa = weighted_frame_constant(w, mu)
    is_field = not hasattr(op, "tail_matrix")
    if is_field:
        e = _eps(tree, op)
        full = multiplier_matrix(e, mu)
        act = active_mask(mu)
    else:
        full = op.full_matrix()
    svals = weighted_singular_values(full, w, mu)
    rows = []
    for N in N_list:
        spec = ProjectionSpec.build(tree, N)
        if is_field:
            comp = spec.complement & act
            tail_sup = float(np.abs(e[comp]).max(initial=0.0))
            T = multiplier_matrix(np.where(comp, e, 0.0), mu)
            rank = int((spec.lagom & act).sum())
            _, Pp = projection_matrices(spec, mu)
            projected = weighted_operator_norm(Pp @ full, w, mu)
        else:
            tail_sup = float(op.tail_sup(N))
            T = op.tail_matrix(N)
            rank = op.tail_rank(N)
            projected = weighted_operator_norm(T, w, mu)
        exact = weighted_operator_norm(T, w, mu)
        emp = _lp_ratio_probe(T, w, mu, float(p), trials, rng) if np.any(T) else 0.0
        bound = tail_sup * ap**power
        sv = float(svals[rank]) if rank < svals.size else 0.0
        tol = 1e-10 * max(1.0, exact)
        rows.append(CompactnessRow(
            N=N, tail_sup=tail_sup, ap_power=power, bound=bound, tail_norm_empirical=emp,
            tail_norm_exact=exact, projected_norm=projected, rank=rank, sv_tail=sv,
            bound_ok=bool(exact <= bound * kappa + tol) if is_field else True,
            sv_ok=bool(sv <= exact + tol) if is_field else True,
        ))
    ts = [r.tail_sup for r in rows]
    tn = [r.tail_norm_exact for r in rows]
    return CompactnessReport(
        p=float(p), ap=ap, frame_constant=kappa, rows=rows,
        tail_sup_nonincreasing=all(b <= a * (1 + 1e-12) for a, b in zip(ts, ts[1:])),
        tail_norm_nonincreasing=all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(tn, tn[1:])),
        decays=bool(len(ts) > 1 and ts[-1] < ts[0]),
        weight_id=weight_id,
    )
