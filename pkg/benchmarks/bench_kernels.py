"""Compare the compiled and numpy tree kernels, and a few end-to-end operations.

    python3 benchmarks/bench_kernels.py [--depth 12] [--dim 1] [--repeat 5]

Each backend is installed into ``sparsedom.kernels`` in turn, so the
end-to-end rows measure the same call paths the library uses.
"""
import argparse
import time

import numpy as np

from sparsedom import kernels
from sparsedom.dyadic import DyadicTree
from sparsedom.measure import RadonMeasure, maximal_M
from sparsedom.multiplier import CoefficientField, apply_tmax

NAMES = ("cube_sums", "ancestor_table", "ancestor_max", "ancestor_scan", "maximal_cubes", "weak_sup")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def install(impl):
    for name in NAMES:
        setattr(kernels, name, getattr(impl, name))


def cases(tree, rng):
    bits, depth = tree.bits, tree.depth
    leaf = rng.normal(size=tree.n_leaves)
    cube = rng.normal(size=tree.n_cubes)
    mask = rng.random(tree.n_leaves) < 0.9
    mass = rng.uniform(0.1, 1.0, tree.n_leaves)
    mu = RadonMeasure(tree, mass)
    eps = CoefficientField(tree, rng.uniform(-1, 1, tree.n_cubes))
    return {
        "cube_sums": lambda: kernels.cube_sums(leaf, bits, depth),
        "ancestor_table": lambda: kernels.ancestor_table(cube, bits, depth),
        "ancestor_max": lambda: kernels.ancestor_max(cube, bits, depth),
        "ancestor_scan": lambda: kernels.ancestor_scan(cube, bits, depth),
        "maximal_cubes": lambda: kernels.maximal_cubes(mask, bits, depth),
        "weak_sup": lambda: kernels.weak_sup(leaf, mass),
        "maximal_M (end to end)": lambda: maximal_M(leaf, mu),
        "apply_tmax (end to end)": lambda: apply_tmax(leaf, eps, mu),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depth", type=int, default=12)
    ap.add_argument("--dim", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    tree = DyadicTree(args.dim, args.depth, leaf_cap=None)
    backends = kernels.available_backends()
    saved = {name: getattr(kernels, name) for name in NAMES}
    timings = {}
    try:
        for label, impl in sorted(backends.items()):
            install(impl)
            for name, fn in cases(tree, np.random.default_rng(args.seed)).items():
                fn()  # warm up
                timings[(label, name)] = best_of(fn, args.repeat)
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)

    print(f"tree: dim {tree.dim}, depth {tree.depth}, {tree.n_leaves} leaves, {tree.n_cubes} cubes")
    labels = sorted(backends)
    head = f"{'operation':26s}" + "".join(f"{lab + ' [ms]':>16s}" for lab in labels)
    if "cython" in backends:
        head += f"{'speedup':>10s}"
    print(head)
    for name in cases(tree, np.random.default_rng(args.seed)):
        row = f"{name:26s}" + "".join(f"{1e3 * timings[(lab, name)]:16.3f}" for lab in labels)
        if "cython" in backends:
            row += f"{timings[('python', name)] / timings[('cython', name)]:9.1f}x"
        print(row)
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
