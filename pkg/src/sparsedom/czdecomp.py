"""Calderon-Zygmund decomposition of a nonnegative step function at height lambda."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import CubeId
from .errors import PreconditionError
from .measure import RadonMeasure, StepFunction, _vals, cube_averages, cube_integrals, maximal_M


def stopping_cubes(avg: np.ndarray, tree, lam: float) -> np.ndarray:
    """Gids of the maximal cubes with average > lam (NaN averages never stop)."""
    big = np.nan_to_num(avg, nan=-np.inf) > lam
    covered = np.zeros(tree.n_cubes, dtype=bool)  # some strict ancestor is big
    for l in range(1, tree.depth + 1):
        sl, pl = tree.level_slice(l), tree.level_slice(l - 1)
        covered[sl] = np.repeat(covered[pl] | big[pl], tree.branch)
    return np.flatnonzero(big & ~covered)


@dataclass
class CZDecomposition:
    f: StepFunction
    mu: RadonMeasure
    lam: float
    good: StepFunction
    bad_parts: list  # (CubeId, StepFunction)
    g1: StepFunction
    g2: StepFunction
    stop_gids: np.ndarray = field(repr=False)

    @property
    def stopping_cubes(self) -> list[CubeId]:
        return [q for q, _ in self.bad_parts]


def _split(x):
    c = 134217729.0 * x  # 2^27 + 1
    hi = c - (c - x)
    return hi, x - hi


def exact_dot(x, y) -> float:
    """Correctly rounded sum(x * y): error-free products (Dekker) summed with fsum."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    p = x * y
    xh, xl = _split(x)
    yh, yl = _split(y)
    e = ((xh * yh - p) + xh * yl + xl * yh) + xl * yl
    return math.fsum(np.concatenate([p, e]))


def _compensate(bj, g2, m, pa, pb, rounds=4):
    """Shift the rounding residue of int b_j onto one parent leaf per round.

    The shift moves between b_j and g so the split stays exact, and changes the
    chosen leaf by at most 1e-13 of its own value.  After a shift the residue
    is the rounding of that single term, about ulp(b_k) m_k, so each round
    picks the admissible leaf minimizing this.
    """
    mm = m[pa:pb]
    bv = bj[pa:pb]
    for _ in range(rounds):
        s = exact_dot(bv, mm)
        if s == 0:
            return
        ok = np.abs(bv) * mm * 1e-13 >= abs(s)
        if not ok.any():
            return
        k = int(np.argmin(np.where(ok, np.spacing(np.abs(bv)) * mm, np.inf)))
        d = s / mm[k]
        bj[pa + k] -= d
        g2[pa + k] += d


def cz_decompose(f, mu: RadonMeasure, lam: float) -> CZDecomposition:
    tree = mu.tree
    fv = _vals(f)
    if np.any(fv < 0):
        raise PreconditionError("the decomposition requires a nonnegative function")
    if mu.total <= 0:
        raise PreconditionError("the measure is zero")
    norm1 = float((fv * mu.leaf_mass).sum())
    threshold = norm1 / mu.total
    if not lam > threshold:
        raise PreconditionError(
            f"lambda={lam!r} must exceed ||f||_1 / mu(root) = {threshold!r} for a finite measure"
        )
    f = StepFunction(tree, fv)
    avg = cube_averages(fv, mu)
    integ = cube_integrals(fv, mu)
    stops = stopping_cubes(avg, tree, lam)
    omega = np.zeros(tree.n_leaves, dtype=bool)
    g2 = np.zeros(tree.n_leaves)
    parts = []
    for g in stops:
        q = tree.cube(g)
        a, b = tree.leaf_range_gid(g)
        omega[a:b] = True
        if q.level == 0:  # only reachable if the precondition is bypassed
            pa, pb, pm = a, b, mu.cube_mass[g]
        else:
            pg = int(tree.parent_gid([g])[0])
            pa, pb = tree.leaf_range_gid(pg)
            pm = mu.cube_mass[pg]
        c = integ[g] / pm
        bj = np.zeros(tree.n_leaves)
        bj[a:b] = fv[a:b]
        bj[pa:pb] -= c
        g2[pa:pb] += c
        _compensate(bj, g2, mu.leaf_mass, pa, pb)
        parts.append((q, StepFunction(tree, bj)))
    g1 = np.where(omega, 0.0, fv)
    return CZDecomposition(
        f=f, mu=mu, lam=float(lam), good=StepFunction(tree, g1 + g2), bad_parts=parts,
        g1=StepFunction(tree, g1), g2=StepFunction(tree, g2), stop_gids=stops,
    )


@dataclass
class CZReport:
    split_residual: float
    good_l2_ratio: float  # ||g||_2^2 / (lambda ||f||_1), bound 6
    g1_l2_ratio: float  # bound 1
    g2_l2_ratio: float  # bound 2
    bad_l1_ratio: float  # sum ||b_j||_1 / ||f||_1, bound 3
    mass_ratio: float  # lambda sum mu(Q_j) / ||f||_1, bound 1 (strict when nonempty)
    g1_sup_ratio: float  # ||g_1||_inf / lambda on positive-mass leaves, bound 1
    mean_zero_residual: float
    support_ok: bool
    disjoint: bool
    stopping_ok: bool
    covers_level_set: bool
    n_bad: int
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def verify_cz(d: CZDecomposition, tol: float = 1e-12) -> CZReport:
    mu, tree, lam = d.mu, d.mu.tree, d.lam
    fv = d.f.values
    m = mu.leaf_mass
    norm1 = float((np.abs(fv) * m).sum())
    scale = max(1.0, float(np.abs(fv).max(initial=0.0)))
    total = d.good.values.copy()
    for _, b in d.bad_parts:
        total += b.values
    resid = float(np.abs(total - fv).max(initial=0.0))
    g_l2 = float((d.good.values**2 * m).sum())
    g1_l2 = float((d.g1.values**2 * m).sum())
    g2_l2 = float((d.g2.values**2 * m).sum())
    bad_l1 = float(sum((np.abs(b.values) * m).sum() for _, b in d.bad_parts))
    mass = float(sum(mu.mass(q) for q in d.stopping_cubes))
    pos = m > 0
    g1_sup = float(np.abs(d.g1.values[pos]).max(initial=0.0))
    mz = 0.0
    support_ok = True
    for q, b in d.bad_parts:
        mz = max(mz, abs(exact_dot(b.values, m)))
        par = tree.parent(q) if q.level else q
        a, bb = tree.leaf_range(par)
        outside = np.ones(tree.n_leaves, dtype=bool)
        outside[a:bb] = False
        support_ok &= not np.any(b.values[outside])
    # disjointness and stopping rule
    cover = np.zeros(tree.n_leaves, dtype=int)
    for q in d.stopping_cubes:
        a, b = tree.leaf_range(q)
        cover[a:b] += 1
    disjoint = bool(cover.max(initial=0) <= 1)
    avg = cube_averages(fv, mu)
    stopping_ok = True
    for g in d.stop_gids:
        if not avg[g] > lam:
            stopping_ok = False
        anc = tree.ancestor_gids(tree.leaf_range_gid(g)[0])[: tree.gid_level[g]]
        if np.any(np.nan_to_num(avg[anc], nan=-np.inf) > lam):
            stopping_ok = False
    Mf = maximal_M(d.f, mu).values
    covers = bool(np.all(cover[Mf > lam] >= 1))
    denom = lam * norm1
    rep = CZReport(
        split_residual=resid,
        good_l2_ratio=g_l2 / denom if denom > 0 else 0.0,
        g1_l2_ratio=g1_l2 / denom if denom > 0 else 0.0,
        g2_l2_ratio=g2_l2 / denom if denom > 0 else 0.0,
        bad_l1_ratio=bad_l1 / norm1 if norm1 > 0 else 0.0,
        mass_ratio=lam * mass / norm1 if norm1 > 0 else 0.0,
        g1_sup_ratio=g1_sup / lam,
        mean_zero_residual=mz,
        support_ok=support_ok,
        disjoint=disjoint,
        stopping_ok=stopping_ok,
        covers_level_set=covers,
        n_bad=len(d.bad_parts),
    )
    rtol = 1e-12
    rep.checks = {
        "split_exact": resid <= tol * scale,
        "good_l2": rep.good_l2_ratio <= 6 + rtol,
        "g1_l2": rep.g1_l2_ratio <= 1 + rtol,
        "g2_l2": rep.g2_l2_ratio <= 2 + rtol,
        "bad_l1": rep.bad_l1_ratio <= 3 + rtol,
        "mass": (rep.mass_ratio < 1) if rep.n_bad else True,
        "g1_sup": rep.g1_sup_ratio <= 1 + rtol,
        "mean_zero": mz <= 1e-10 * max(1.0, norm1),
        "support": support_ok,
        "disjoint": disjoint,
        "stopping": stopping_ok,
        "maximality": covers,
    }
    return rep
