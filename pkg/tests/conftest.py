import sys
import numpy as np
import pytest

from sparsedom import kernels
from sparsedom.dyadic import DyadicTree
from sparsedom.measure import RadonMeasure, StepFunction

_NAMES = ("cube_sums", "ancestor_table", "ancestor_max", "ancestor_scan", "maximal_cubes", "weak_sup")


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request, monkeypatch):
    """Run the test body once per available kernel backend."""
    impl = kernels.available_backends()[request.param]
    for name in _NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def leaf_box(tree: DyadicTree, leaf: int):
    return tree.box(tree.cube(tree.level_slice(tree.depth).start + leaf))


def cube_leaves(tree: DyadicTree, q):
    """Leaves inside ``q`` found by exact box containment (no Morton arithmetic)."""
    box = tree.box(q)
    return [i for i in range(tree.n_leaves) if box.contains(leaf_box(tree, i))]


def leaf_ancestors(tree: DyadicTree, leaf: int):
    """Cubes containing ``leaf``, root first, found by exact box containment."""
    lb = leaf_box(tree, leaf)
    out = [q for q in tree.cubes() if tree.box(q).contains(lb)]
    return sorted(out, key=lambda q: q.level)


def brute_average(values, mass, tree, q):
    idx = cube_leaves(tree, q)
    m = mass[idx].sum()
    return (values[idx] * mass[idx]).sum() / m if m > 0 else None


def unit_interval(depth, dim=1):
    tree = DyadicTree(dim, depth)
    return tree, RadonMeasure.uniform(tree)


def step(tree, values):
    return StepFunction(tree, np.asarray(values, float))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
