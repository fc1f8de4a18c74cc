import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cube_leaves, unit_interval
from sparsedom.dyadic import Box, CubeId, DyadicTree
from sparsedom.instances import random_coefficients, random_cube, random_function, random_measure, random_tree
from sparsedom.measure import RadonMeasure, StepFunction, average
from sparsedom.multiplier import CoefficientField
from sparsedom.sparse import (
    SparseFamily,
    SparseOperatorSpec,
    SparseTerm,
    box_leaf_mask,
    build_sparse_haar,
    evaluate_sparse,
    verify_domination,
    verify_sparseness,
)


def test_packing_examples():
    tree, mu = unit_interval(3)
    ok = SparseFamily(tree, [tree.root, CubeId(2, (0,)), CubeId(2, (2,))])
    rep = verify_sparseness(ok, mu)
    assert rep.passed and rep.ratios[0] == 0.5
    bad = SparseFamily(tree, [tree.root, CubeId(1, (0,)), CubeId(1, (1,))])
    rep = verify_sparseness(bad, mu)
    assert not rep.passed and rep.ratios[0] == 1.0


def test_children_are_maximal_members():
    tree, mu = unit_interval(4)
    fam = SparseFamily(tree, [tree.root, CubeId(1, (0,)), CubeId(3, (0,)), CubeId(3, (6,))])
    ch = fam.children_map()
    assert sorted(ch[0]) == [1, 3] and ch[1] == [2]
    rep = verify_sparseness(fam, mu)
    assert rep.ratios[0] == pytest.approx(0.5 + 0.125)


def test_box_members():
    tree = DyadicTree(1, 4, corner=(Fr(-4),), side=Fr(8))
    mu = RadonMeasure.uniform(tree)
    outer = Box((Fr(-2),), Fr(4))
    fam = SparseFamily(tree, [outer, CubeId(3, (4,)), CubeId(3, (5,))])
    assert box_leaf_mask(tree, outer).sum() == 8
    rep = verify_sparseness(fam, mu)
    assert rep.ratios[0] == pytest.approx(0.5) and rep.passed


def test_evaluate_trivial():
    tree, mu = unit_interval(3)
    empty = SparseOperatorSpec(SparseFamily(tree, []), [], mu)
    assert np.all(evaluate_sparse(empty, StepFunction.constant(tree)).values == 0)
    one = SparseOperatorSpec(SparseFamily(tree, [tree.root]), [SparseTerm(0, 1.0)], mu)
    assert np.all(evaluate_sparse(one, StepFunction.constant(tree)).values == 1)


def test_null_members_are_skipped():
    tree = DyadicTree(1, 2)
    mu = RadonMeasure(tree, [1, 1, 0, 0])
    fam = SparseFamily(tree, [tree.root, CubeId(1, (1,))])
    spec = SparseOperatorSpec(fam, [SparseTerm(0, 1.0), SparseTerm(1, 1.0)], mu)
    sf, skipped = evaluate_sparse(spec, StepFunction.constant(tree), return_skipped=True)
    assert skipped == 1 and np.all(sf.values == 1)


def test_evaluate_matches_double_loop(backend):
    r = np.random.default_rng(0)
    for _ in range(60):
        tree = random_tree(r, 64)
        mu = random_measure(tree, r)
        f = random_function(tree, r)
        cubes = list({random_cube(tree, r) for _ in range(int(r.integers(1, 12)))})
        fam = SparseFamily(tree, cubes)
        weights = r.uniform(0, 3, len(fam))
        selectors = []
        for q in fam.cubes():
            sel = None
            if q.level > 0 and r.random() < 0.5:
                sel = tree.box(tree.parent(q))
            selectors.append(sel)
        spec = SparseOperatorSpec(fam, [SparseTerm(i, float(w), s) for i, (w, s) in enumerate(zip(weights, selectors))], mu)
        ref = np.zeros(tree.n_leaves)
        fabs = np.abs(f.values)
        for i, q in enumerate(fam.cubes()):
            src = q if selectors[i] is None else tree.parent(q)
            idx = cube_leaves(tree, src)
            mass = mu.leaf_mass[idx].sum()
            if mass <= 0:
                continue
            a = (fabs[idx] * mu.leaf_mass[idx]).sum() / mass
            ref[cube_leaves(tree, q)] += weights[i] * a
        np.testing.assert_allclose(evaluate_sparse(spec, f).values, ref, rtol=1e-12, atol=1e-12)


def test_selector_outside_root_uses_uniform_volume():
    tree = DyadicTree(1, 3, corner=(Fr(0),), side=Fr(8))
    mu = RadonMeasure.uniform(tree)
    fam = SparseFamily(tree, [tree.root])
    spec = SparseOperatorSpec(fam, [SparseTerm(0, 1.0, Box((Fr(-8),), Fr(16)))], mu)
    # <1_root>_{[-8,8)} = 1/2
    assert np.allclose(evaluate_sparse(spec, StepFunction.constant(tree)).values, 0.5)
    lumpy = RadonMeasure(tree, np.arange(1.0, 9.0))
    with pytest.raises(ValueError):
        evaluate_sparse(SparseOperatorSpec(fam, spec.terms, lumpy), StepFunction.constant(tree))


def test_verify_domination_examples():
    t = np.array([1.0, -2.0, 0.0])
    assert verify_domination(np.zeros(3), np.ones(3)) == 0.0
    s = np.abs(t)
    assert verify_domination(t, s) == 1.0
    assert verify_domination(t, np.array([1.0, 0.0, 0.0])) == math.inf
    assert verify_domination(t, np.array([1.0, 0.0, 0.0]), support=[True, False, False]) == 1.0


def test_zero_coefficients_give_zero_constant():
    r = np.random.default_rng(1)
    tree = DyadicTree(1, 6)
    mu = RadonMeasure.uniform(tree)
    res = build_sparse_haar(random_function(tree, r), CoefficientField.constant(tree, 0.0), mu)
    assert res.report.C_emp == 0.0 and res.report.packing_ok


def test_indicator_pipeline():
    tree, mu = unit_interval(6)
    q0 = CubeId(3, (2,))
    f = StepFunction.indicator(tree, q0)
    res = build_sparse_haar(f, CoefficientField.constant(tree, 1.0), mu)
    np.testing.assert_allclose(res.Tf.values, f.values - average(f, mu, tree.root), atol=1e-13)
    assert np.all(res.Sf.values >= average(f, mu, tree.root) - 1e-15)
    rep = res.report
    assert rep.packing_ok and rep.halves_packing_ok and math.isfinite(rep.C_emp)
    support = f.values != 0
    assert np.all(np.abs(res.Tf.values[support]) <= rep.C_emp * res.Sf.values[support] * (1 + 1e-12))


def _sparse_oracle(res, mu, f, eps):
    """S_eps|f| rebuilt from the family cubes with box-containment averages."""
    tree = mu.tree
    incl = CoefficientField(tree, eps.values).inclusive_sup()
    fabs = np.abs(f.values)
    out = np.zeros(tree.n_leaves)
    for q in res.family.cubes():
        idx = cube_leaves(tree, q)
        mass = mu.leaf_mass[idx].sum()
        if mass > 0:
            out[idx] += incl[tree.gid(q)] * (fabs[idx] * mu.leaf_mass[idx]).sum() / mass
    return out


def test_construction_random_suite(backend):
    r = np.random.default_rng(2)
    cemps = []
    for _ in range(80):
        tree = random_tree(r, 64)
        mu = random_measure(tree, r)
        f = random_function(tree, r)
        eps = random_coefficients(tree, r)
        res = build_sparse_haar(f, eps, mu)
        rep = res.report
        assert rep.packing_ok and rep.halves_packing_ok
        assert tree.root in res.family.cubes() or mu.total == 0
        assert rep.recursion_depth <= tree.depth
        assert rep.max_exceptional_ratio <= 0.5
        assert math.isfinite(rep.C_emp)
        if len(res.family.cubes()) <= 40:
            np.testing.assert_allclose(res.Sf.values, _sparse_oracle(res, mu, f, eps), rtol=1e-11, atol=1e-12)
        sup = (f.values != 0) & (mu.leaf_mass > 0)
        assert np.all(np.abs(res.Tf.values[sup]) <= rep.C_emp * res.Sf.values[sup] * (1 + 1e-12) + 1e-12)
        cemps.append(rep.C_emp)
    assert np.median(cemps) < np.inf


def test_weights_options():
    r = np.random.default_rng(3)
    tree = DyadicTree(1, 5)
    mu = RadonMeasure.uniform(tree)
    f = random_function(tree, r)
    eps = random_coefficients(tree, r, "signed")
    strict = build_sparse_haar(f, eps, mu, weights="strict")
    incl = build_sparse_haar(f, eps, mu, weights="inclusive")
    assert np.all(incl.Sf.values >= strict.Sf.values - 1e-15)
    with pytest.raises(ValueError):
        build_sparse_haar(f, eps, mu, weights="bogus")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sparse_operator_monotone_in_weights(seed):
    r = np.random.default_rng(seed)
    tree = random_tree(r, 64)
    mu = random_measure(tree, r)
    f = random_function(tree, r)
    fam = SparseFamily(tree, list({random_cube(tree, r) for _ in range(6)}))
    w = r.uniform(0, 1, len(fam))
    bigger = w + r.uniform(0, 1, len(fam))
    lo = evaluate_sparse(SparseOperatorSpec(fam, [SparseTerm(i, float(x)) for i, x in enumerate(w)], mu), f)
    hi = evaluate_sparse(SparseOperatorSpec(fam, [SparseTerm(i, float(x)) for i, x in enumerate(bigger)], mu), f)
    assert np.all(lo.values <= hi.values + 1e-12)
    assert np.all(lo.values >= 0)
