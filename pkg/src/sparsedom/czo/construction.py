"""Sparse domination of the tail of a compact kernel operator (uniform measure).

Outside a cube Q0 around the support the tail is controlled on the annuli
Q_j minus Q_{j-1}; inside Q0 a stopping-time recursion over a partition of
Q0 produces the local part of the family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .. import kernels
from ..dyadic import Box, CubeId
from ..errors import ConsistencyError, GeometryInfeasibleError
from ..measure import StepFunction, _vals, maximal_M
from ..sparse import (
    Member,
    SparseFamily,
    SparseOperatorSpec,
    SparseTerm,
    box_leaf_mask,
    evaluate_sparse,
    verify_domination,
    verify_sparseness,
)
from .coefficients import eps_coefficients
from .kernel import KernelOperator


@dataclass
class AnnulusRow:
    j: int
    box: Box
    n_leaves: int
    avg: float  # <|f|>_{Q_j}
    C_ttilde: float  # max |T~f| / <|f|>_{Q_j} on the annulus
    C_tail: float  # same for the projected tail
    C_over_eps: float  # C_tail / eps


@dataclass
class CZOSparseReport:
    N: int
    eps: float  # eps_eff = sup of eps_Q over the complement of the lagom family
    C_M: float
    C_T: float
    C_Tstar: float
    c_prime: float
    domination: float  # max over leaves of |P^perp T~ f| / S|f|, S|f| = sum <|f|>_{R*} 1_R
    C_emp: float  # domination / eps
    domination_support: float
    annuli: list
    C_annulus: float
    max_exceptional_ratio: float  # max |E_Q| / |Q|
    max_eprime_ratio: float  # max |E'_P| / |P|
    xprime_ok: bool
    packing_max: float
    packing_ok: bool
    halves_packing_ok: bool
    recursion_depth: int
    n_members: int
    n_partition: int
    partition_side: float
    Q0: str
    B: str
    extras: dict = field(default_factory=dict)

    @property
    def exact_ok(self) -> bool:
        return bool(self.packing_ok and self.halves_packing_ok)


@dataclass
class CZOSparseResult:
    family: SparseFamily
    spec: SparseOperatorSpec
    halves: tuple
    report: CZOSparseReport
    Gf: StepFunction
    Sf: StepFunction


def _box_sup_distance(inner: Box, outer: Box) -> Fraction:
    """dist(inner, outer^c) in the sup norm; negative when inner sticks out."""
    return min(
        min(a - c, (c + outer.side) - (a + inner.side)) for a, c in zip(inner.corner, outer.corner)
    )


def _support_box(tree, fv) -> Box:
    """Smallest tree cube containing the support of f."""
    nz = np.flatnonzero(fv)
    if nz.size == 0:
        return tree.root_box
    a, b = int(nz[0]), int(nz[-1])
    level = tree.depth
    while level > 0 and (a >> (tree.dim * (tree.depth - level))) != (b >> (tree.dim * (tree.depth - level))):
        level -= 1
    g = tree.offsets[level] + (a >> (tree.dim * (tree.depth - level)))
    return tree.box(tree.cube(int(g)))


def _cubes_in_box(tree, box: Box, side: Fraction) -> list[CubeId]:
    l = 0
    while tree.side(l) > side:
        l += 1
    if tree.side(l) != side:
        raise GeometryInfeasibleError(f"partition side {side} is not a tree side length")
    out = []
    for g in range(tree.offsets[l], tree.offsets[l + 1]):
        q = tree.cube(int(g))
        if box.contains(tree.box(q)):
            out.append(q)
    if Fraction(len(out)) * side**tree.dim != box.volume:
        raise GeometryInfeasibleError(f"Q0 = {box} is not tiled by tree cubes of side {side}")
    return out


def _subtree_slice(tree, g: int, level: int) -> slice:
    q = int(tree.gid_level[g])
    k = int(g - tree.offsets[q])
    w = 1 << (tree.dim * (level - q))
    start = int(tree.offsets[level]) + k * w
    return slice(start, start + w)


def _maximal_dense_cubes(tree, g: int, frac: np.ndarray, thr: float) -> list[int]:
    """Maximal tree cubes strictly inside cube g whose fraction exceeds ``thr``."""
    q = int(tree.gid_level[g])
    out = []
    blocked = np.zeros(1, dtype=bool)
    for l in range(q + 1, tree.depth + 1):
        sl = _subtree_slice(tree, g, l)
        blocked = np.repeat(blocked, tree.branch)
        hit = (frac[sl] > thr) & ~blocked
        out.extend((np.flatnonzero(hit) + sl.start).tolist())
        blocked |= hit
    return out


def _weak(values: np.ndarray, masses: np.ndarray) -> float:
    return kernels.weak_sup(values, masses)


def build_sparse_czo(f, op: KernelOperator, N: int, B: Box | None = None, Q0: Box | None = None,
                     partition_side=None, safety: float = 2.0, eps: float | None = None, F_W=None,
                     max_generations: int = 64) -> CZOSparseResult:
    """Stopping-time sparse family dominating |P_N^perp T~ f| for f supported in B.

    Members: the annuli Q_j = 2^j Q0 inside the root, a partition of Q0 into
    tree cubes, and the recursively selected exceptional cubes P (averaged over
    P* = 5P).  The thresholds use c' = 2^{n+3} * safety * max(C_M, C_T, C_T*)
    with weak-type constants measured exactly on the cubes the recursion can visit.
    """
    tree = op.tree
    n = tree.dim
    mu = op.mu
    lm = mu.leaf_mass
    fv = _vals(f).astype(float)
    if B is None:
        B = _support_box(tree, fv)
    if np.any(fv[~box_leaf_mask(tree, B)] != 0):
        raise GeometryInfeasibleError(f"f is not supported in B = {B}")
    if Q0 is None:
        Q0 = tree.root_box.dilate(Fraction(1, 2))
    need = Fraction(2) ** (N + 3) * B.side
    gap = _box_sup_distance(B, Q0)
    if not (Q0.contains(B) and gap >= need):
        raise GeometryInfeasibleError(
            f"need dist(B, Q0^c) >= 2^(N+3) l(B) = {need} for N = {N}, got {gap} (B = {B}, Q0 = {Q0})"
        )
    annuli = []
    j = 1
    while tree.root_box.contains(Q0.dilate(2**j)):
        annuli.append(Q0.dilate(2**j))
        j += 1
    if not annuli:
        raise GeometryInfeasibleError(f"no annulus 2Q0 fits inside the root {tree.root_box}; widen the root")
    if not tree.root_box.contains(Q0):
        raise GeometryInfeasibleError("Q0 must lie inside the root")
    if partition_side is None:
        partition_side = max(Fraction(2), Fraction(2) ** (-(N + 2)))
        partition_side = max(partition_side, tree.leaf_side)
    partition_side = Fraction(partition_side)
    part = _cubes_in_box(tree, Q0, partition_side)

    if eps is None:
        eps = eps_coefficients(op, N, F_W=F_W).tail_sup
    eps = float(eps)
    G = op.tail_matrix(N)
    Gf = G @ fv
    fabs = np.abs(fv)
    fint = kernels.cube_sums(fabs * lm, tree.bits, tree.depth)
    avg = np.where(mu.cube_mass > 0, fint / np.maximum(mu.cube_mass, 1e-300), 0.0)
    q0_mask = box_leaf_mask(tree, Q0)

    # measured weak constants over every cube the recursion can visit
    cand = [g for g in range(tree.n_cubes)
            if fint[g] > 0 and Q0.contains(tree.box(tree.cube(g))) and tree.box(tree.cube(g)).side <= partition_side]
    C_M = C_T = C_Ts = 0.0
    tables: dict[int, tuple] = {}
    for g in cand:
        a, b = tree.leaf_range_gid(g)
        fq = np.zeros_like(fv)
        fq[a:b] = fv[a:b]
        Mq = maximal_M(fq, mu).values
        Gq = G[:, a:b] @ fv[a:b]
        tables[g] = (Mq, Gq)
        C_M = max(C_M, _weak(Mq[a:b], lm[a:b]) / fint[g])
        if eps > 0:
            C_T = max(C_T, _weak(Gq[a:b], lm[a:b]) / (eps * fint[g]))
    star_cache: dict[int, tuple] = {}
    for g in range(tree.n_cubes):
        box = tree.box(tree.cube(g))
        if not Q0.contains(box) or box.side > partition_side:
            continue
        smask = box_leaf_mask(tree, box.dilate(5))
        sint = float((fabs * lm)[smask].sum())
        if sint <= 0:
            continue
        a, b = tree.leaf_range_gid(g)
        Gs = G[a:b][:, smask] @ fv[smask]
        savg = sint / (float(box.dilate(5).volume) * float(lm[0]) / float(tree.leaf_volume))
        star_cache[g] = (Gs, savg)
        if eps > 0:
            C_Ts = max(C_Ts, _weak(Gs, lm[a:b]) / (eps * savg * mu.cube_mass[g]))
    c_prime = 2 ** (n + 3) * safety * max(C_M, C_T, C_Ts, 1e-300)
    dense = 2.0 ** (-(n + 1))

    members: list[Member] = []
    selectors: list[Box | None] = []
    weights: list[float] = []
    gens: list[int] = []
    half: list[int] = []
    for k, Q in enumerate(annuli):
        members.append(Member(Q, None))
        selectors.append(None)
        weights.append(1.0)
        gens.append(0)
        half.append(-1)
    max_ratio = max_eprime = 0.0
    xprime_ok = True
    depth_reached = 0
    stack = []
    for k, q in enumerate(part):
        stack.append((tree.gid(q), 1, k % 2, None))
    while stack:
        g, gen, hl, sel = stack.pop()
        box = tree.box(tree.cube(g))
        members.append(Member(box, tree.cube(g)))
        selectors.append(sel)
        weights.append(1.0)
        gens.append(gen)
        half.append(hl)
        depth_reached = max(depth_reached, gen)
        if fint[g] <= 0:
            continue
        if gen > max_generations:
            raise ConsistencyError("recursion did not terminate")
        a, b = tree.leaf_range_gid(g)
        Mq, Gq = tables[g]
        A = avg[g]
        E = np.zeros(tree.n_leaves, dtype=bool)
        E[a:b] = (Mq[a:b] > c_prime * A) | (np.abs(Gq[a:b]) > c_prime * eps * A)
        if not E.any():
            continue
        ratio = float(lm[E].sum() / mu.cube_mass[g])
        max_ratio = max(max_ratio, ratio)
        Em = kernels.cube_sums(E * lm, tree.bits, tree.depth)
        frac = np.where(mu.cube_mass > 0, Em / np.maximum(mu.cube_mass, 1e-300), 0.0)
        if frac[g] > dense:
            raise ConsistencyError(f"exceptional set fills {frac[g]:.3f} of its cube; c' is too small")
        for pg in sorted(_maximal_dense_cubes(tree, g, frac, dense)):
            pa, pb = tree.leaf_range_gid(pg)
            # a point of P outside E_Q where the P* piece is also small
            if pg in star_cache:
                Gs, savg = star_cache[pg]
                Ep = np.abs(Gs) > c_prime * eps * savg
            else:
                Ep = np.zeros(pb - pa, dtype=bool)
            max_eprime = max(max_eprime, float(lm[pa:pb][Ep].sum() / mu.cube_mass[pg]))
            xprime_ok &= bool(np.any(~E[pa:pb] & ~Ep))
            pbox = tree.box(tree.cube(pg))
            stack.append((int(pg), gen + 1, hl, pbox.dilate(5)))

    family = SparseFamily(tree, members, 0.5, generation=gens)
    if len(family) != len(members):
        raise ConsistencyError("duplicate members in the constructed family")
    terms = [SparseTerm(i, weights[i], selectors[i]) for i in range(len(members))]
    spec = SparseOperatorSpec(family, terms, mu)
    Sf = evaluate_sparse(spec, fv)
    dom = verify_domination(Gf, Sf, lm > 0)
    dom_supp = verify_domination(Gf, Sf, (fv != 0) & (lm > 0))
    sp = verify_sparseness(family, mu)
    halves, halves_ok = [], True
    for h in (0, 1):
        idx = [i for i in range(len(members)) if half[i] in (h, -1)]
        sub = family.subfamily(idx)
        halves_ok &= verify_sparseness(sub, mu).passed
        halves.append(SparseOperatorSpec(sub, [SparseTerm(k, weights[i], selectors[i]) for k, i in enumerate(idx)], mu))

    # annulus estimates, leafwise
    Tt = op.ttilde_matrix(N) @ fv
    rows = []
    prev = q0_mask
    for j, Q in enumerate(annuli, start=1):
        qm = box_leaf_mask(tree, Q)
        ring = qm & ~prev
        prev = qm
        a_j = float((fabs * lm)[qm].sum()) / (float(Q.volume) * float(lm[0]) / float(tree.leaf_volume))
        if a_j > 0:
            c1 = float(np.max(np.abs(Tt[ring]), initial=0.0)) / a_j
            c2 = float(np.max(np.abs(Gf[ring]), initial=0.0)) / a_j
        else:
            c1 = c2 = 0.0
        rows.append(AnnulusRow(j, Q, int(ring.sum()), a_j, c1, c2, c2 / eps if eps > 0 else (0.0 if c2 == 0 else math.inf)))
    c_ann = max((r.C_ttilde for r in rows), default=0.0)

    report = CZOSparseReport(
        N=int(N), eps=eps, C_M=C_M, C_T=C_T, C_Tstar=C_Ts, c_prime=c_prime,
        domination=dom, C_emp=dom / eps if eps > 0 else (0.0 if dom == 0 else math.inf),
        domination_support=dom_supp, annuli=rows, C_annulus=c_ann, max_exceptional_ratio=max_ratio,
        max_eprime_ratio=max_eprime, xprime_ok=xprime_ok, packing_max=sp.max_ratio, packing_ok=sp.passed,
        halves_packing_ok=halves_ok, recursion_depth=depth_reached, n_members=len(members),
        n_partition=len(part), partition_side=float(partition_side), Q0=str(Q0), B=str(B),
    )
    return CZOSparseResult(family, spec, tuple(halves), report, StepFunction(tree, Gf), Sf)


@dataclass
class ProfileSweepRow:
    label: str
    eps: float
    domination: float
    C_emp: float
    packing_ok: bool


def profile_sweep(f, ops: dict, N: int, **kw) -> tuple[list, float]:
    """Run the construction for several operators; returns rows and the max relative
    deviation of C_emp = domination / eps from its median."""
    rows = []
    for label, op in ops.items():
        r = build_sparse_czo(f, op, N, **kw).report
        rows.append(ProfileSweepRow(label, r.eps, r.domination, r.C_emp, r.packing_ok))
    c = np.array([r.C_emp for r in rows])
    med = float(np.median(c))
    dev = float(np.max(np.abs(c / med - 1.0))) if med > 0 else math.inf
    return rows, dev
