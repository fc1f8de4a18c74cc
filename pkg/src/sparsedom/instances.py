"""Random instance generators shared by the CLI self-test and the test-suite."""
from __future__ import annotations

import numpy as np

from .dyadic import CubeId, DyadicTree


def random_tree(rng, max_leaves=256) -> DyadicTree:
    rng = np.random.default_rng(rng)
    dim = int(rng.integers(1, 3))
    max_depth = int(np.log2(max_leaves)) // dim
    depth = int(rng.integers(1, max_depth + 1))
    return DyadicTree(dim, depth)


def random_cube(tree: DyadicTree, rng, min_level=0, max_level=None) -> CubeId:
    rng = np.random.default_rng(rng)
    hi = tree.depth if max_level is None else max_level
    level = int(rng.integers(min_level, hi + 1))
    return CubeId(level, tuple(int(i) for i in rng.integers(0, 1 << level, size=tree.dim)))


def random_measure_mass(tree: DyadicTree, rng, kind: str | None = None) -> np.ndarray:
    """Leaf masses from a mix of regular, lacunary and strongly non-doubling families."""
    rng = np.random.default_rng(rng)
    kinds = ["uniform", "positive", "holes", "lognormal", "atomic"]
    kind = kind or kinds[int(rng.integers(len(kinds)))]
    n = tree.n_leaves
    if kind == "uniform":
        m = np.full(n, float(tree.leaf_volume))
    elif kind == "positive":
        m = rng.uniform(0.1, 1.0, n)
    elif kind == "holes":
        m = rng.uniform(0.0, 1.0, n) * (rng.uniform(size=n) < 0.6)
        # kill whole random subtrees too
        for _ in range(int(rng.integers(0, 3))):
            q = random_cube(tree, rng, min_level=1)
            a, b = tree.leaf_range(q)
            m[a:b] = 0.0
    elif kind == "lognormal":
        m = np.exp(rng.normal(0.0, 3.0, n))
    elif kind == "atomic":
        m = np.full(n, 1e-3) * rng.uniform(size=n)
        m[rng.integers(0, n, size=max(1, n // 16))] = rng.uniform(1.0, 100.0, size=max(1, n // 16))
    else:
        raise ValueError(f"unknown measure kind {kind!r}")
    if m.sum() <= 0:
        m[int(rng.integers(n))] = 1.0
    return m


def random_measure(tree: DyadicTree, rng, kind: str | None = None):
    from .measure import RadonMeasure

    return RadonMeasure(tree, random_measure_mass(tree, rng, kind))


def random_function_values(tree: DyadicTree, rng, kind: str | None = None, nonnegative=False) -> np.ndarray:
    rng = np.random.default_rng(rng)
    kinds = ["gauss", "spikes", "indicator", "heavy", "smooth"]
    kind = kind or kinds[int(rng.integers(len(kinds)))]
    n = tree.n_leaves
    if kind == "gauss":
        v = rng.normal(size=n)
    elif kind == "spikes":
        v = np.zeros(n)
        k = int(rng.integers(1, max(2, n // 8) + 1))
        v[rng.integers(0, n, size=k)] = rng.normal(0, 10, size=k)
    elif kind == "indicator":
        q = random_cube(tree, rng)
        v = np.zeros(n)
        a, b = tree.leaf_range(q)
        v[a:b] = rng.uniform(0.5, 5.0)
    elif kind == "heavy":
        v = rng.standard_cauchy(size=n)
    elif kind == "smooth":
        x = tree.leaf_centers()
        k = rng.normal(size=tree.dim) * 3
        v = np.cos(x @ k + rng.uniform(0, 6.3))
    else:
        raise ValueError(f"unknown function kind {kind!r}")
    if not np.any(v):
        v[int(rng.integers(n))] = 1.0
    return np.abs(v) if nonnegative else v


def random_function(tree: DyadicTree, rng, kind: str | None = None, nonnegative=False):
    from .measure import StepFunction

    return StepFunction(tree, random_function_values(tree, rng, kind, nonnegative))


def random_coefficients(tree: DyadicTree, rng, kind: str | None = None):
    from .multiplier import CoefficientField

    rng = np.random.default_rng(rng)
    kinds = ["unit", "signed", "sparse", "one", "decay"]
    kind = kind or kinds[int(rng.integers(len(kinds)))]
    n = tree.n_cubes
    if kind == "unit":
        v = rng.uniform(0, 1, n)
    elif kind == "signed":
        v = rng.uniform(-1, 1, n)
    elif kind == "sparse":
        v = rng.uniform(-1, 1, n) * (rng.uniform(size=n) < 0.2)
    elif kind == "one":
        v = np.ones(n)
    elif kind == "decay":
        v = rng.uniform(0.5, 1, n) * 0.7 ** tree.gid_level
    else:
        raise ValueError(f"unknown coefficient kind {kind!r}")
    return CoefficientField(tree, v)


def random_weight_values(tree: DyadicTree, rng, kind: str | None = None) -> np.ndarray:
    """Positive weights: log-normal noise and power weights around a random point."""
    rng = np.random.default_rng(rng)
    kinds = ["lognormal", "power", "one", "step"]
    kind = kind or kinds[int(rng.integers(len(kinds)))]
    n = tree.n_leaves
    if kind == "one":
        return np.ones(n)
    if kind == "lognormal":
        return np.exp(rng.normal(0, 0.7, n))
    if kind == "power":
        x = tree.leaf_centers()
        lo = np.array([float(c) for c in tree.root_box.corner])
        x0 = lo + rng.uniform(0, float(tree.root_box.side), tree.dim)
        alpha = rng.uniform(-0.6, 0.6) * tree.dim
        r = np.sqrt(((x - x0) ** 2).sum(axis=1)) + float(tree.leaf_side) / 4
        return r**alpha
    if kind == "step":
        v = np.ones(n)
        q = random_cube(tree, rng, min_level=1)
        a, b = tree.leaf_range(q)
        v[a:b] = rng.uniform(0.1, 10)
        return v
    raise ValueError(f"unknown weight kind {kind!r}")


def random_weight(tree: DyadicTree, rng, kind: str | None = None):
    from .measure import Weight

    return Weight(tree, random_weight_values(tree, rng, kind))
