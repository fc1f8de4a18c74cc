"""Sparse families, sparse operators and the sparse construction for Haar multipliers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dyadic import Box, CubeId, DyadicTree
from .errors import ConsistencyError
from .measure import RadonMeasure, StepFunction, _vals, child_max_abs, cube_averages
from .multiplier import (
    CoefficientField,
    _eps,
    apply_multiplier,
    localized_tmax_table,
    truncation_table,
)


def box_leaf_mask(tree: DyadicTree, box: Box) -> np.ndarray:
    """Leaves whose centres lie in the half-open box (exact integer test)."""
    u = tree.unit
    c2 = 2 * tree.int_corners(tree.depth) + tree.int_side(tree.depth)
    mask = np.ones(tree.n_leaves, dtype=bool)
    for i in range(tree.dim):
        lo = math.ceil(2 * box.corner[i] / u)
        hi = math.ceil(2 * (box.corner[i] + box.side) / u)
        mask &= (c2[:, i] >= lo) & (c2[:, i] < hi)
    return mask


@dataclass(frozen=True)
class Member:
    box: Box
    cube: CubeId | None = None


class SparseFamily:
    """Set of cubes (tree cubes or general boxes inside the root) with packing constant."""

    def __init__(self, tree: DyadicTree, members, packing_constant: float = 0.5, generation=None, links=None):
        self.tree = tree
        seen, out = set(), []
        for m in members:
            if isinstance(m, CubeId):
                m = Member(tree.box(m), m)
            elif isinstance(m, Box):
                m = Member(m, None)
            if m.box not in seen:
                seen.add(m.box)
                out.append(m)
        self.members: list[Member] = out
        self.packing_constant = float(packing_constant)
        self.generation = list(generation) if generation is not None else None
        self.links = links
        self._masks: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.members)

    def cubes(self) -> list[CubeId]:
        return [m.cube for m in self.members if m.cube is not None]

    def leaf_mask(self, i: int) -> np.ndarray:
        if i not in self._masks:
            m = self.members[i]
            if m.cube is not None:
                mk = np.zeros(self.tree.n_leaves, dtype=bool)
                a, b = self.tree.leaf_range(m.cube)
                mk[a:b] = True
            else:
                mk = box_leaf_mask(self.tree, m.box)
            self._masks[i] = mk
        return self._masks[i]

    def _strictly_inside(self, i: int, j: int) -> bool:
        """Member i is a strict subset of member j."""
        a, b = self.members[i], self.members[j]
        if a.box == b.box:
            return False
        if a.cube is not None and b.cube is not None:
            if a.cube.level <= b.cube.level:
                return False
            shift = a.cube.level - b.cube.level
            return tuple(x >> shift for x in a.cube.index) == b.cube.index
        return b.box.contains(a.box)

    def family_parents(self) -> list[int | None]:
        """Index of the smallest member strictly containing each member."""
        n = len(self.members)
        out: list[int | None] = [None] * n
        cube_pos = {m.cube: k for k, m in enumerate(self.members) if m.cube is not None}
        boxes = [k for k, m in enumerate(self.members) if m.cube is None]
        for i, m in enumerate(self.members):
            best = None
            if m.cube is not None:
                q = m.cube
                while q.level > 0:
                    q = CubeId(q.level - 1, tuple(x >> 1 for x in q.index))
                    if q in cube_pos:
                        best = cube_pos[q]
                        break
            for j in boxes:
                if j != i and self._strictly_inside(i, j):
                    if best is None or self.members[j].box.side < self.members[best].box.side:
                        best = j
            out[i] = best
        return out

    def children_map(self) -> dict[int, list[int]]:
        """ch_S(Q): maximal members strictly inside Q."""
        ch: dict[int, list[int]] = {i: [] for i in range(len(self.members))}
        for i, p in enumerate(self.family_parents()):
            if p is not None:
                ch[p].append(i)
        return ch

    def exclusive_sets(self) -> dict[int, np.ndarray]:
        """E(Q) = Q minus the union of ch_S(Q), as leaf masks."""
        out = {}
        for i, kids in self.children_map().items():
            e = self.leaf_mask(i).copy()
            for k in kids:
                e &= ~self.leaf_mask(k)
            out[i] = e
        return out

    def subfamily(self, indices) -> "SparseFamily":
        return SparseFamily(self.tree, [self.members[i] for i in indices], self.packing_constant)


@dataclass
class SparsenessReport:
    ratios: dict
    max_ratio: float
    passed: bool


def member_mass(family: SparseFamily, i: int, mu: RadonMeasure) -> float:
    m = family.members[i]
    if m.cube is not None:
        return mu.mass(m.cube)
    return float(mu.leaf_mass[family.leaf_mask(i)].sum())


def verify_sparseness(family: SparseFamily, mu: RadonMeasure, tol: float = 1e-12) -> SparsenessReport:
    ratios = {}
    for i, kids in family.children_map().items():
        mq = member_mass(family, i, mu)
        s = sum(member_mass(family, k, mu) for k in kids)
        if mq > 0:
            ratios[i] = s / mq
        else:
            ratios[i] = 0.0 if s == 0 else math.inf
    mx = max(ratios.values(), default=0.0)
    return SparsenessReport(ratios, mx, bool(mx <= family.packing_constant + tol))


@dataclass
class SparseTerm:
    member: int
    weight: float
    selector: Box | None = None  # average over this box instead of the member


@dataclass
class SparseOperatorSpec:
    family: SparseFamily
    terms: list
    measure: RadonMeasure


def selector_average(tree, mu: RadonMeasure, box: Box, fabs: np.ndarray):
    """<|f|>_box, allowing boxes that stick out of the root when mu is uniform."""
    mask = box_leaf_mask(tree, box)
    integral = float((fabs * mu.leaf_mass)[mask].sum())
    if tree.root_box.contains(box):
        mass = float(mu.leaf_mass[mask].sum())
    else:
        lm = mu.leaf_mass
        if not np.allclose(lm, lm[0], rtol=1e-14, atol=0):
            raise ValueError("selectors outside the root need a uniform measure")
        mass = float(box.volume) * float(lm[0]) / float(tree.leaf_volume)
    return integral, mass


def evaluate_sparse(spec: SparseOperatorSpec, f, return_skipped=False):
    """Sum of weight * <|f|>_selector * 1_member over the terms."""
    fam, mu, tree = spec.family, spec.measure, spec.family.tree
    fabs = np.abs(_vals(f))
    out = np.zeros(tree.n_leaves)
    skipped = 0
    avg_cache = None
    for t in spec.terms:
        m = fam.members[t.member]
        if t.selector is None and m.cube is not None:
            if avg_cache is None:
                avg_cache = cube_averages(fabs, mu)
            a = avg_cache[tree.gid(m.cube)]
            if not np.isfinite(a):
                skipped += 1
                continue
            lo, hi = tree.leaf_range(m.cube)
            out[lo:hi] += t.weight * a
            continue
        box = t.selector if t.selector is not None else m.box
        integral, mass = selector_average(tree, mu, box, fabs)
        if mass <= 0:
            skipped += 1
            continue
        out[fam.leaf_mask(t.member)] += t.weight * integral / mass
    sf = StepFunction(tree, out)
    return (sf, skipped) if return_skipped else sf


def verify_domination(Tf, Sf, support=None, atol=None) -> float:
    """max over support leaves of |Tf|/Sf; inf when Sf vanishes but Tf does not."""
    t = np.abs(_vals(Tf))
    s = _vals(Sf)
    sup = np.ones(t.size, dtype=bool) if support is None else np.asarray(support, dtype=bool)
    if atol is None:
        atol = 1e-13 * max(1.0, float(t.max(initial=0.0)))
    t = np.where(t <= atol, 0.0, t)
    t, s = t[sup], s[sup]
    live = (t > 0) | (s > 0)
    if not np.any(live):
        return 0.0
    t, s = t[live], s[live]
    if np.any((s <= 0) & (t > 0)):
        return math.inf
    return float(np.max(t / s))


# --------------------------------------------------------------------------
# construction for Haar multipliers
# --------------------------------------------------------------------------

@dataclass
class HaarSparseReport:
    C: float
    C_M: float
    C_T: float
    C_emp: float
    C_emp_all: float
    max_exceptional_ratio: float
    recursion_depth: int
    n_members: int
    packing_max: float
    packing_ok: bool
    halves_packing_ok: bool
    weights: str
    extras: dict = field(default_factory=dict)


@dataclass
class HaarSparseResult:
    family: SparseFamily
    spec: SparseOperatorSpec
    halves: tuple
    report: HaarSparseReport
    Tf: StepFunction
    Sf: StepFunction


def _subtree_gids(tree, q_level, q_morton, rel_gids, sub_depth):
    """Map gids of a subtree (rooted at the given cube) to gids of the full tree."""
    sub_off = kernels.level_offsets(tree.bits, sub_depth)
    rel_level = np.searchsorted(sub_off, rel_gids, side="right") - 1
    k = rel_gids - sub_off[rel_level]
    lev = q_level + rel_level
    return tree.offsets[lev] + (q_morton << (tree.bits * rel_level)) + k


def localized_weak_constants(f, eps, mu: RadonMeasure, tables=None):
    """Largest exact weak-type ratios of the localized M_eps and T^max over all cubes.

    For a cube Q of level q the ratio is
    sup_lambda lambda mu{x in Q: op_Q f(x) > lambda} / (eps~_Q ||f 1_Q||_1).
    """
    tree = mu.tree
    SM, TM, est = tables if tables is not None else _localized_tables(f, eps, mu)
    fabs = np.abs(_vals(f))
    integ = kernels.cube_sums(fabs * mu.leaf_mass, tree.bits, tree.depth)
    lm = mu.leaf_mass
    cm = ct = 0.0
    for g in range(tree.n_cubes):
        denom = est[g] * integ[g]
        if mu.cube_mass[g] <= 0 or denom <= 0:
            continue
        q = int(tree.gid_level[g])
        a, b = tree.leaf_range_gid(g)
        cm = max(cm, kernels.weak_sup(SM[a:b, q], lm[a:b]) / denom)
        ct = max(ct, kernels.weak_sup(TM[a:b, q], lm[a:b]) / denom)
    return cm, ct


def _localized_tables(f, eps, mu):
    tree = mu.tree
    e = _eps(tree, eps)
    field_ = CoefficientField(tree, e)
    est = field_.running_sup()
    g = child_max_abs(tree, e) * cube_averages(np.abs(_vals(f)), mu)
    G = kernels.ancestor_table(np.nan_to_num(g, nan=-np.inf), tree.bits, tree.depth)
    # suffix max over levels >= q: sup over cubes inside the level-q ancestor
    SM = np.maximum.accumulate(G[:, ::-1], axis=1)[:, ::-1]
    SM = np.where(np.isneginf(SM), 0.0, SM)
    S = truncation_table(f, e, mu)
    TM = localized_tmax_table(S)
    return SM, TM, est


def build_sparse_haar(f, eps, mu: RadonMeasure, weights: str = "inclusive", safety: float = 2.0) -> HaarSparseResult:
    """Stopping-time construction of a sparse family dominating the multiplier.

    ``weights="inclusive"`` uses max(|eps_Q|, eps~_Q) per family cube;
    ``weights="strict"`` uses eps~_Q (sup over strict subcubes only).
    """
    tree = mu.tree
    e = _eps(tree, eps)
    fv = _vals(f)
    tables = _localized_tables(fv, e, mu)
    SM, TM, est = tables
    C_M, C_T = localized_weak_constants(fv, e, mu, tables)
    C = safety * (C_M + C_T)
    incl = np.maximum(np.abs(e), est)
    wsel = incl if weights == "inclusive" else est
    if weights not in ("inclusive", "strict"):
        raise ValueError("weights must be 'inclusive' or 'strict'")
    avg = cube_averages(np.abs(fv), mu)
    m = mu.cube_mass
    lm = mu.leaf_mass

    members, gens, half, parents = [], [], [], []
    max_ratio = 0.0
    depth_reached = 0
    stack = [(0, None, 0, 0)]
    while stack:
        g, par, gen, hl = stack.pop()
        if m[g] <= 0:
            continue
        idx = len(members)
        members.append(tree.cube(g))
        gens.append(gen)
        half.append(hl)
        parents.append(par)
        depth_reached = max(depth_reached, gen)
        q = int(tree.gid_level[g])
        a, b = tree.leaf_range_gid(g)
        if q == tree.depth:
            continue
        A = avg[g]
        if not A > 0:
            if np.any(TM[a:b, q] > 0):
                raise ConsistencyError("zero average on a cube where the localized multiplier is nonzero")
            continue
        thr = 2.0 * C * est[g] * A
        E = (SM[a:b, q] > thr) | (TM[a:b, q] > thr)
        if not E.any():
            continue
        ratio = float(lm[a:b][E].sum() / m[g])
        max_ratio = max(max_ratio, ratio)
        rel = kernels.maximal_cubes(E, tree.bits, tree.depth - q)
        kids = _subtree_gids(tree, q, int(g - tree.offsets[q]), rel, tree.depth - q)
        kids = np.sort(kids)
        for j, kg in enumerate(kids):
            if kg == g:
                raise ConsistencyError("exceptional set covers its whole cube")
            stack.append((int(kg), idx, gen + 1, j % 2))

    family = SparseFamily(tree, members, 0.5, generation=gens, links=parents)
    terms = [SparseTerm(i, float(wsel[tree.gid(c)])) for i, c in enumerate(members)]
    spec = SparseOperatorSpec(family, terms, mu)
    Tf = apply_multiplier(fv, e, mu)
    Sf = evaluate_sparse(spec, fv)
    support = (fv != 0) & (lm > 0)
    c_emp = verify_domination(Tf, Sf, support)
    c_all = verify_domination(Tf, Sf, lm > 0)
    sp = verify_sparseness(family, mu)
    halves = []
    halves_ok = True
    for h in (0, 1):
        idx = [i for i in range(len(members)) if half[i] == h]
        sub = family.subfamily(idx)
        halves_ok &= verify_sparseness(sub, mu).passed
        halves.append(SparseOperatorSpec(sub, [SparseTerm(k, terms[i].weight) for k, i in enumerate(idx)], mu))
    report = HaarSparseReport(
        C=C, C_M=C_M, C_T=C_T, C_emp=c_emp, C_emp_all=c_all, max_exceptional_ratio=max_ratio,
        recursion_depth=depth_reached, n_members=len(members), packing_max=sp.max_ratio,
        packing_ok=sp.passed, halves_packing_ok=halves_ok, weights=weights,
    )
    return HaarSparseResult(family, spec, tuple(halves), report, Tf, Sf)
