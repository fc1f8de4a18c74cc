"""Decay coefficients of compact kernel operators, testing conditions and the smoothness estimate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..dyadic import Box, CubeId
from ..errors import ConfigError
from ..measure import _vals, maximal_M
from .kernel import KernelOperator

UNIT_CUBE_HALF = 0.5  # the unit cube [-1/2, 1/2]^n


# --------------------------------------------------------------------------
# cube geometry in floating point (all coordinates are dyadic, hence exact)
# --------------------------------------------------------------------------

def _cube_arrays(tree):
    u = float(tree.unit)
    lo = tree.gid_int_corner.astype(float) * u
    side = tree.gid_int_side.astype(float) * u
    return lo, side


def rdist_to_unit_cube(lo: np.ndarray, side: np.ndarray) -> np.ndarray:
    """l(<I, B>) / l(I v B) for cubes with corners ``lo`` (..., n) and sides ``side`` (...)."""
    hi = lo + side[..., None]
    ext = np.maximum(hi, UNIT_CUBE_HALF) - np.minimum(lo, -UNIT_CUBE_HALF)
    return ext.max(-1) / np.maximum(side, 2 * UNIT_CUBE_HALF)


def weak_compactness_test(op: KernelOperator, cubes=None) -> np.ndarray:
    """|<T 1_Q, 1_Q>| / |Q| for every cube (per gid) or for the given CubeIds."""
    tree = op.tree
    m = op.leaf_mass
    B = op.matrix * m[:, None]  # <T 1_Q, 1_Q> = sum_ij m_i A_ij over Q x Q
    P = np.zeros((B.shape[0] + 1, B.shape[1] + 1))
    P[1:, 1:] = B.cumsum(0).cumsum(1)
    out = np.zeros(tree.n_cubes)
    for g in range(tree.n_cubes):
        a, b = tree.leaf_range_gid(g)
        s = P[b, b] - P[a, b] - P[b, a] + P[a, a]
        out[g] = abs(s) / op.mu.cube_mass[g]
    if cubes is None:
        return out
    return np.array([out[tree.gid(q)] for q in cubes])


def _fw_array(op: KernelOperator, F_W) -> np.ndarray:
    tree = op.tree
    if F_W is None or (isinstance(F_W, str) and F_W == "measured"):
        return weak_compactness_test(op)
    if callable(F_W):
        return np.array([float(F_W(tree.cube(g))) for g in range(tree.n_cubes)])
    if np.isscalar(F_W):
        return np.full(tree.n_cubes, float(F_W))
    arr = np.asarray(F_W, float)
    if arr.shape != (tree.n_cubes,):
        raise ConfigError("F_W must be per-cube (one value per tree cube)")
    return arr


# --------------------------------------------------------------------------
# coefficient formula
# --------------------------------------------------------------------------

@dataclass
class EpsCoefficientReport:
    N: int
    eps: np.ndarray  # per gid (all tree cubes)
    geometric: np.ndarray
    tail_t1: np.ndarray
    tail_t1star: np.ndarray
    f_tilde: np.ndarray  # F~_K(Q)
    complement: np.ndarray  # per-gid mask of D_N^c
    e_range: tuple
    m_range: tuple
    truncation: tuple | None = None
    notes: list = field(default_factory=list)

    @property
    def tail_sup(self) -> float:
        return float(self.eps[self.complement].max(initial=0.0))

    def sup_over_complement(self, N: int, tree) -> float:
        from ..dyadic import lagom_mask

        comp = ~lagom_mask(tree, N)
        return float(self.eps[comp].max(initial=0.0))


def _geometric_part(op: KernelOperator, FW: np.ndarray, truncation=None, block=None):
    """Sum over (e, m) cells of omega(2^-|e|) omega(1/m)/m * max_R F(Q, R), per Q."""
    tree, K = op.tree, op.kernel
    lo, side = _cube_arrays(tree)
    hi = lo + side[:, None]
    level = tree.gid_level.astype(np.int64)
    nc = tree.n_cubes
    rd_self = rdist_to_unit_cube(lo, side)
    root_ext = float(tree.root_box.side)
    r_max = 4.0 + 2.0 * (root_ext + max(abs(float(c)) for c in tree.root_box.corner))
    tr = op._cache.get("transforms")
    if tr is None:
        tr = K.transforms(r_max)
        op._cache["transforms"] = tr
    Lt_side = tr.L_tilde(side)
    S_side = K.S(side)
    amp = abs(float(K.amplitude))
    Ft_self = amp * Lt_side * S_side * tr.D_tilde(rd_self)
    omega = K.omega
    out = np.zeros(nc)
    e_seen = [0, 0]
    m_seen = [1, 1]
    if block is None:
        block = max(1, 2**20 // nc)
    for a in range(0, nc, block):
        b = min(nc, a + block)
        rows = np.arange(a, b)
        sQ, sR = side[a:b, None], side[None, :]
        big = np.maximum(sQ, sR)
        q_small = sQ < sR  # Q is the strictly smaller cube
        blo = np.minimum(lo[a:b, None, :], lo[None, :, :])
        bhi = np.maximum(hi[a:b, None, :], hi[None, :, :])
        s_br = (bhi - blo).max(-1)
        m = np.floor(s_br / big).astype(np.int64)
        e = level[None, :] - level[a:b, None]  # l(Q) = 2^e l(R)
        far = s_br > 3 * big
        # bracket cube with centre closest to the origin
        cmin = bhi - s_br[..., None] / 2
        cmax = blo + s_br[..., None] / 2
        cen = np.clip(0.0, cmin, cmax)
        br_lo = cen - s_br[..., None] / 2
        rd_br = rdist_to_unit_cube(br_lo, s_br)
        # inner cube (smaller; R on ties) touching the inner boundary of the outer cube
        in_lo = np.where(q_small[..., None], lo[a:b, None, :], lo[None, :, :])
        in_hi = np.where(q_small[..., None], hi[a:b, None, :], hi[None, :, :])
        out_lo = np.where(q_small[..., None], lo[None, :, :], lo[a:b, None, :])
        out_s = np.where(q_small, sR, sQ)
        out_hi = out_lo + out_s[..., None]
        meet = (in_lo <= out_hi) & (out_lo <= in_hi)  # closed intervals intersect, per axis
        touch = np.zeros(s_br.shape, dtype=bool)
        n = tree.dim
        for ax in range(n):
            others = np.ones(s_br.shape, dtype=bool)
            for bx in range(n):
                if bx != ax:
                    others &= meet[..., bx]
            for t in (out_lo[..., ax], out_lo[..., ax] + out_s / 2, out_hi[..., ax]):
                touch |= others & (in_lo[..., ax] <= t) & (t <= in_hi[..., ax])
        small_gid = np.where(q_small, rows[:, None], np.arange(nc)[None, :])
        Lt_small = Lt_side[small_gid]
        S_small = S_side[small_gid]
        F1 = amp * K.L(s_br) * S_small * K.D(rd_br)
        F2 = amp * Lt_small * S_small * tr.D_tilde(rd_br)
        delta = rows[:, None] == np.arange(nc)[None, :]
        F3 = F2 + Ft_self[small_gid] + np.where(delta, FW[rows][:, None], 0.0)
        F = np.where(far, F1, np.where(touch, F3, F2))
        keep = np.ones(F.shape, dtype=bool)
        if truncation is not None:
            e_max, m_max = truncation
            keep = (np.abs(e) <= e_max) & (m <= m_max)
        e_seen = [min(e_seen[0], int(e[keep].min(initial=0))), max(e_seen[1], int(e[keep].max(initial=0)))]
        m_seen = [min(m_seen[0], int(m[keep].min(initial=1))), max(m_seen[1], int(m[keep].max(initial=1)))]
        # group max over (e, m) cells per row
        Mx = int(m.max()) + 1
        E0 = int(tree.depth)
        key = ((np.arange(b - a)[:, None] * (2 * E0 + 1) + (e + E0)) * Mx + m)[keep]
        vals = F[keep]
        if key.size == 0:
            continue
        order = np.lexsort((vals, key))
        ks, vs = key[order], vals[order]
        last = np.ones(ks.size, dtype=bool)
        last[:-1] = ks[1:] != ks[:-1]
        kk, vv = ks[last], vs[last]
        mm = kk % Mx
        ee = (kk // Mx) % (2 * E0 + 1) - E0
        rr = kk // (Mx * (2 * E0 + 1))
        wt = omega(2.0 ** (-np.abs(ee).astype(float))) * omega(1.0 / mm) / mm
        out[a:b] += np.bincount(rr, weights=wt * vv, minlength=b - a)
    return out, Ft_self, tuple(e_seen), tuple(m_seen)


def bmo_tail(coeffs: np.ndarray, mask: np.ndarray, tree, mu) -> np.ndarray:
    """(|Q|^{-1} sum_{R strictly inside Q, R in mask} c_R^2)^{1/2}, per gid."""
    v = np.where(mask, coeffs, 0.0) ** 2
    sub = v.copy()
    for l in range(tree.depth - 1, -1, -1):
        sl, ch = tree.level_slice(l), tree.level_slice(l + 1)
        sub[sl] += sub[ch].reshape(-1, tree.branch).sum(axis=1)
    strict = sub - v
    return np.sqrt(np.maximum(strict, 0.0) / mu.cube_mass)


def dyadic_bmo(f, mu) -> float:
    """sup_Q (<|f - <f>_Q|^2>_Q)^{1/2} over tree cubes, by direct variance."""
    from ..measure import cube_averages

    fv = _vals(f)
    a1 = cube_averages(fv, mu)
    a2 = cube_averages(fv**2, mu)
    var = np.maximum(a2 - a1**2, 0.0)
    return float(np.sqrt(np.nanmax(var)))


def eps_coefficients(op: KernelOperator, N: int, F_W=None, truncation=None) -> EpsCoefficientReport:
    """Per-cube decay coefficients: weighted (e, m) cell maxima plus two BMO tails.

    All (e, m) cells realized by pairs of tree cubes are enumerated, so the
    sum has no truncation error inside the model unless ``truncation`` is set.
    """
    if N < 1:
        raise ValueError("N must be a positive integer")
    if op.t1_data is None or op.t1star_data is None:
        raise ConfigError("T1 and T*1 coefficient data are required; assemble the matrix or supply them")
    tree = op.tree
    FW = _fw_array(op, F_W)
    key = ("geom", FW.tobytes(), truncation)
    if key not in op._cache:
        op._cache[key] = _geometric_part(op, FW, truncation)
    geo, Ft, er, mr = op._cache[key]
    spec = op.projection(N)
    comp = ~spec.lagom
    t1 = bmo_tail(op.t1_data.coeffs, comp, tree, op.mu)
    t1s = bmo_tail(op.t1star_data.coeffs, comp, tree, op.mu)
    return EpsCoefficientReport(
        N=int(N), eps=geo + t1 + t1s, geometric=geo, tail_t1=t1, tail_t1star=t1s, f_tilde=Ft,
        complement=comp, e_range=er, m_range=mr, truncation=truncation,
        notes=["universal constants inside L, S, D arguments are omitted"],
    )


# --------------------------------------------------------------------------
# smoothness estimate away from a cube
# --------------------------------------------------------------------------

@dataclass
class SmoothnessReport:
    lhs: float
    eps_bar: float
    Mf: float
    rhs: float
    ratio: float


def eps_bar(op: KernelOperator, q: CubeId) -> float:
    """L(l(Q)) S(l(Q)) D~(rdist(Q, B))."""
    tree, K = op.tree, op.kernel
    box = tree.box(q)
    lo = np.array([float(c) for c in box.corner])
    s = float(box.side)
    r = float(rdist_to_unit_cube(lo[None, :], np.array([s]))[0])
    tr = op._cache.get("transforms")
    if tr is None:
        root_ext = float(tree.root_box.side)
        tr = K.transforms(4.0 + 2.0 * (root_ext + max(abs(float(c)) for c in tree.root_box.corner)))
        op._cache["transforms"] = tr
    return float(abs(K.amplitude) * K.L(s) * K.S(s) * tr.D_tilde(r))


def smoothness_difference_bound(op: KernelOperator, q: CubeId, N: int, f, x: int, xp: int) -> SmoothnessReport:
    """|P_N^perp T~(f 1_{outside 5Q})(x) - same(x')| against eps_bar(Q) M f(x); x, x' leaf indices in Q."""
    from ..sparse import box_leaf_mask

    tree = op.tree
    a, b = tree.leaf_range(q)
    if not (a <= x < b and a <= xp < b):
        raise ValueError("x and x' must be leaves of Q")
    fv = _vals(f)
    star = box_leaf_mask(tree, tree.box(q).dilate(5))
    g = np.where(star, 0.0, fv)
    G = op.tail_matrix(N)
    u = G[[x, xp]] @ g
    lhs = float(abs(u[0] - u[1]))
    eb = eps_bar(op, q)
    Mf = float(maximal_M(fv, op.mu).values[x])
    rhs = eb * Mf
    ratio = 0.0 if lhs == 0 else (lhs / rhs if rhs > 0 else math.inf)
    return SmoothnessReport(lhs, eb, Mf, rhs, ratio)
