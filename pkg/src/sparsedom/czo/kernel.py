"""Compact Calderon-Zygmund kernels and their discretization on a dyadic tree."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dyadic import DyadicTree
from ..errors import ConfigError, ResourceCapError
from ..haar import HaarExpansion, active_mask, analysis_matrix, haar_coefficients
from ..measure import RadonMeasure, StepFunction, _vals
from ..weighted import ProjectionSpec
from .profiles import ScalarProfile, Transforms, _cached_dini, modulus_power

DEFAULT_MATRIX_CAP = 4096 * 4096


@dataclass
class CompactCZKernel:
    """K(x, y) = sign(amplitude) * F_K(x, y) * shape(x - y), F_K = |amplitude| L(|x-y|) S(|x-y|) D(|x+y|).

    ``shape="odd"`` uses (x - y)_1 / |x - y|^{n+1}; ``shape="even"`` uses
    |x - y|^{-n}.  A custom ``kernel_eval(x, y)`` overrides the formula.
    """

    dim: int = 1
    omega: ScalarProfile = field(default_factory=lambda: modulus_power(0.5))
    L: ScalarProfile = field(default_factory=lambda: ScalarProfile.make("constant"))
    S: ScalarProfile = field(default_factory=lambda: ScalarProfile.make("constant"))
    D: ScalarProfile = field(default_factory=lambda: ScalarProfile.make("constant"))
    amplitude: float = 1.0
    shape: str = "odd"
    delta_cap: float = 0.0
    kernel_eval: object = None
    dini: float = field(init=False)

    def __post_init__(self):
        if self.shape not in ("odd", "even"):
            raise ConfigError(f"kernel shape must be 'odd' or 'even', got {self.shape!r}")
        # raises QuadratureError when omega is not Dini integrable
        self.dini = _cached_dini(self.omega)

    def F(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        r = np.sqrt(((x - y) ** 2).sum(-1))
        s = np.sqrt(((x + y) ** 2).sum(-1))
        return abs(self.amplitude) * self.L(r) * self.S(r) * self.D(s)

    def F4(self, x, y, xp, yp):
        """Four-point factor L(|x-y|) S(|x-x'|+|y-y'|) D(1 + |x+y|/(1+|x-y|))."""
        x, y, xp, yp = (np.asarray(a, float) for a in (x, y, xp, yp))
        r = np.sqrt(((x - y) ** 2).sum(-1))
        h = np.sqrt(((x - xp) ** 2).sum(-1)) + np.sqrt(((y - yp) ** 2).sum(-1))
        s = np.sqrt(((x + y) ** 2).sum(-1))
        return abs(self.amplitude) * self.L(r) * self.S(h) * self.D(1.0 + s / (1.0 + r))

    def __call__(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        if self.kernel_eval is not None:
            return np.asarray(self.kernel_eval(x, y), float)
        d = x - y
        r = np.sqrt((d**2).sum(-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.shape == "odd":
                base = d[..., 0] / r ** (self.dim + 1)
            else:
                base = r ** (-float(self.dim))
        return math.copysign(1.0, self.amplitude) * self.F(x, y) * base

    def transforms(self, r_max: float) -> Transforms:
        return Transforms(self.omega, self.L, self.D, r_max)

    def to_json(self) -> dict:
        return {
            "dim": self.dim, "omega": self.omega.to_json(), "L": self.L.to_json(), "S": self.S.to_json(),
            "D": self.D.to_json(), "amplitude": self.amplitude, "shape": self.shape, "delta_cap": self.delta_cap,
        }

    @classmethod
    def from_json(cls, obj: dict, dim: int | None = None) -> "CompactCZKernel":
        known = {"dim", "omega", "L", "S", "D", "amplitude", "shape", "delta_cap", "profile", "near"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown kernel field(s): {', '.join(sorted(extra))}")
        kw = {}
        for k in ("omega", "L", "S", "D"):
            if k in obj:
                kw[k] = ScalarProfile.from_json(obj[k])
        return cls(
            dim=int(obj.get("dim", dim or 1)), amplitude=float(obj.get("amplitude", 1.0)),
            shape=obj.get("shape", "odd"), delta_cap=float(obj.get("delta_cap", 0.0)), **kw,
        )


@dataclass
class KernelSampleReport:
    size_constant: float  # max |K| |x-y|^n / F_K
    smoothness_constant: float  # max |K(x,y)-K(x',y')| |x-y|^n / (omega(.) F_K(x,y))
    samples: int


def sample_kernel_constants(kernel: CompactCZKernel, box_lo, box_hi, samples: int = 2000, rng=None) -> KernelSampleReport:
    """Measured constants in the size and smoothness bounds on random admissible points."""
    rng = np.random.default_rng(rng)
    n = kernel.dim
    lo, hi = np.asarray(box_lo, float), np.asarray(box_hi, float)
    x = rng.uniform(lo, hi, size=(samples, n))
    y = rng.uniform(lo, hi, size=(samples, n))
    r = np.sqrt(((x - y) ** 2).sum(-1))
    keep = r > 1e-9
    x, y, r = x[keep], y[keep], r[keep]
    F = kernel.F(x, y)
    K = kernel(x, y)
    ok = F > 0
    size = float(np.max(np.abs(K[ok]) * r[ok] ** n / F[ok], initial=0.0))
    if np.any(~ok & (np.abs(K) > 0)):
        size = math.inf
    # admissible perturbations |x-x'| + |y-y'| <= |x-y|/2
    dirs = rng.normal(size=(x.shape[0], 2, n))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    frac = rng.uniform(0.0, 0.5, size=x.shape[0]) * rng.uniform(0, 1, size=x.shape[0]) ** 3
    split = rng.uniform(0, 1, size=x.shape[0])
    hx = (frac * split * r)[:, None] * dirs[:, 0]
    hy = (frac * (1 - split) * r)[:, None] * dirs[:, 1]
    xp, yp = x + hx, y + hy
    t = (np.linalg.norm(hx, axis=-1) + np.linalg.norm(hy, axis=-1)) / r
    diff = np.abs(K - kernel(xp, yp))
    den = kernel.omega(t) * F / r**n
    good = den > 0
    smooth = float(np.max(diff[good] / den[good], initial=0.0))
    if np.any(~good & (diff > 1e-300)):
        smooth = math.inf
    return KernelSampleReport(size, smooth, int(x.shape[0]))


class KernelOperator:
    """Dense leaf matrix of a kernel operator under the uniform measure of a tree.

    ``(Tf)_i = sum_j A_ij f_j`` with ``A_ij = K(c_i, c_j) |leaf|`` for leaf
    centres farther apart than ``delta_cap`` (and i != j); the remaining
    near-diagonal entries come from ``near`` (default 0).
    """

    def __init__(self, kernel: CompactCZKernel, tree: DyadicTree, near=None, threads: int = 1,
                 matrix_cap: int | None = DEFAULT_MATRIX_CAP, matrix: np.ndarray | None = None):
        if kernel.dim != tree.dim:
            raise ConfigError("kernel and tree dimensions differ")
        n = tree.n_leaves
        if matrix_cap is not None and n * n > matrix_cap:
            raise ResourceCapError(f"dense {n}x{n} operator matrix exceeds the cap of {matrix_cap} entries")
        self.kernel = kernel
        self.tree = tree
        self.mu = RadonMeasure.uniform(tree)
        self.threads = max(1, int(threads))
        self.near = near
        self.matrix = self._assemble() if matrix is None else np.array(matrix, dtype=float)
        if self.matrix.shape != (n, n):
            raise ConfigError(f"operator matrix must be {n}x{n}")
        self.matrix.setflags(write=False)
        self._cache: dict = {}

    # assembly ---------------------------------------------------------------
    def _assemble(self) -> np.ndarray:
        tree, K = self.tree, self.kernel
        c = tree.leaf_centers()
        vol = float(tree.leaf_volume)
        n = tree.n_leaves
        A = np.zeros((n, n))
        cap = float(K.delta_cap)

        def rows(a, b):
            x = c[a:b, None, :]
            d = np.sqrt(((x - c[None, :, :]) ** 2).sum(-1))
            far = d > cap
            far[np.arange(b - a), np.arange(a, b)] = False
            with np.errstate(divide="ignore", invalid="ignore"):
                blk = K(np.broadcast_to(x, (b - a, n, tree.dim)), np.broadcast_to(c[None], (b - a, n, tree.dim)))
            A[a:b] = np.where(far, blk * vol, 0.0)
            return far

        step = max(1, min(n, 2**20 // max(n, 1)))
        blocks = [(a, min(n, a + step)) for a in range(0, n, step)]
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                list(ex.map(lambda ab: rows(*ab), blocks))
        else:
            for a, b in blocks:
                rows(a, b)
        if self.near is not None:
            self._apply_near(A, c, cap)
        return A

    def _apply_near(self, A, c, cap):
        n = A.shape[0]
        near_mask = np.zeros((n, n), dtype=bool)
        for a in range(0, n, 512):
            b = min(n, a + 512)
            d = np.sqrt(((c[a:b, None, :] - c[None, :, :]) ** 2).sum(-1))
            near_mask[a:b] = d <= cap
        np.fill_diagonal(near_mask, True)
        nb = self.near
        if callable(nb):
            i, j = np.nonzero(near_mask)
            A[i, j] = np.asarray(nb(i, j), float)
        elif np.isscalar(nb):
            A[np.diag_indices(n)] = float(nb)
        else:
            nb = np.asarray(nb, float)
            if nb.shape != A.shape:
                raise ConfigError("near block must be a scalar, a callable or an n x n matrix")
            A[near_mask] = nb[near_mask]

    # basic actions ----------------------------------------------------------
    @property
    def leaf_mass(self) -> np.ndarray:
        return self.mu.leaf_mass

    def apply(self, f) -> StepFunction:
        return StepFunction(self.tree, self.matrix @ _vals(f))

    def full_matrix(self) -> np.ndarray:
        return self.matrix

    @property
    def t1(self) -> StepFunction:
        return StepFunction(self.tree, self.matrix @ np.ones(self.tree.n_leaves))

    @property
    def t1star(self) -> StepFunction:
        m = self.leaf_mass
        return StepFunction(self.tree, (self.matrix.T @ m) / m)

    @property
    def t1_data(self) -> HaarExpansion:
        return HaarExpansion(self.mu, haar_coefficients(self.t1, self.mu))

    @property
    def t1star_data(self) -> HaarExpansion:
        return HaarExpansion(self.mu, haar_coefficients(self.t1star, self.mu))

    # projections ------------------------------------------------------------
    def projection(self, N: int) -> ProjectionSpec:
        key = ("proj", N)
        if key not in self._cache:
            self._cache[key] = ProjectionSpec.build(self.tree, N)
        return self._cache[key]

    def lagom_rows(self, N: int):
        """(gids, H) for active lagom cubes; rows of H are leaf values of h_Q."""
        key = ("rows", N)
        if key not in self._cache:
            gids, H = analysis_matrix(self.mu)
            keep = self.projection(N).lagom[gids]
            self._cache[key] = (gids[keep], H[keep])
        return self._cache[key]

    def pperp_apply(self, X, N: int) -> np.ndarray:
        """P_N^perp applied to leaf vectors (columns of X)."""
        X = np.asarray(X, float)
        m = self.leaf_mass
        _, H = self.lagom_rows(N)
        mean = (m @ X) / m.sum()
        out = X - (mean[None, ...] if X.ndim == 2 else mean)
        if H.shape[0]:
            mX = X * (m[:, None] if X.ndim == 2 else m)
            out = out - H.T @ (H @ mX)
        return out

    def pistar_matrix(self, N: int) -> np.ndarray:
        """Matrix of the finite-rank paraproduct built from P_N(T*1)."""
        key = ("pistar", N)
        if key not in self._cache:
            gids, H = self.lagom_rows(N)
            b = self.t1star_data.coeffs[gids]
            m = self.leaf_mass
            n = self.tree.n_leaves
            Phi = np.zeros((n, gids.size))
            for k, g in enumerate(gids):
                a, e = self.tree.leaf_range_gid(int(g))
                Phi[a:e, k] = 1.0 / self.mu.cube_mass[g]
            self._cache[key] = (Phi * b[None, :]) @ (H * m[None, :])
        return self._cache[key]

    def ttilde_matrix(self, N: int) -> np.ndarray:
        return self.matrix - self.pistar_matrix(N)

    def tail_matrix(self, N: int) -> np.ndarray:
        """Matrix of P_N^perp T~."""
        key = ("tail", N)
        if key not in self._cache:
            self._cache[key] = self.pperp_apply(self.ttilde_matrix(N), N)
        return self._cache[key]

    def tail_rank(self, N: int) -> int:
        """T minus its tail has rank at most this (projection plus paraproduct)."""
        gids, _ = self.lagom_rows(N)
        return 2 * int(gids.size) + 1

    def tail_sup(self, N: int, F_W=None) -> float:
        from .coefficients import eps_coefficients

        return eps_coefficients(self, N, F_W=F_W).tail_sup


# --------------------------------------------------------------------------
# paraproducts
# --------------------------------------------------------------------------

def paraproduct(b: HaarExpansion, f, variant: str = "Pi", M: int | None = None) -> StepFunction:
    """Pi_b f = sum b_I <f>_I h_I,  Pi*_b f = sum b_I <f,h_I> phi_I  (phi_I = 1_I / |I|).

    ``variant="PiStar_truncated"`` keeps only the lagom cubes of order ``M``.
    """
    from ..haar import synthesis_cube_values
    from ..measure import cube_averages
    from .. import kernels

    mu = b.mu
    tree = mu.tree
    coeffs = np.where(active_mask(mu), b.coeffs, 0.0)
    if variant == "PiStar_truncated":
        if M is None:
            raise ValueError("the truncated paraproduct needs M")
        coeffs = np.where(ProjectionSpec.build(tree, M).lagom, coeffs, 0.0)
    elif variant not in ("Pi", "PiStar"):
        raise ValueError(f"unknown paraproduct variant {variant!r}")
    if variant == "Pi":
        avg = np.nan_to_num(cube_averages(f, mu), nan=0.0)
        v = synthesis_cube_values(coeffs * avg, mu)
    else:
        c = haar_coefficients(f, mu)
        m = mu.cube_mass
        v = np.zeros(tree.n_cubes)
        pos = m > 0
        v[pos] = coeffs[pos] * c[pos] / m[pos]
    tot, _ = kernels.ancestor_scan(v, tree.bits, tree.depth)
    return StepFunction(tree, tot)


def paraproduct_matrix(b: HaarExpansion, variant: str = "Pi", M: int | None = None) -> np.ndarray:
    """Dense matrix of the paraproduct, assembled column by column from unit vectors."""
    tree = b.mu.tree
    n = tree.n_leaves
    out = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        out[:, j] = paraproduct(b, e, variant, M).values
    return out
