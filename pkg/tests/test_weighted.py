import math
from fractions import Fraction as Fr

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from sparsedom.dyadic import DyadicTree, lagom_mask
from sparsedom.haar import analyze, haar_function, synthesize
from sparsedom.instances import random_coefficients, random_function, random_measure, random_tree, random_weight
from sparsedom.measure import RadonMeasure, StepFunction, Weight, lp_norm
from sparsedom.multiplier import CoefficientField, DecayProfile, apply_multiplier, multiplier_matrix
from sparsedom.weighted import (
    ProjectionSpec,
    compactness_scan,
    dual_constants,
    exponent_identity,
    maximal_weighted_ratio,
    project,
    projection_matrices,
    bound_constant,
    weighted_bound_check,
    weighted_frame_constant,
    weighted_operator_norm,
)


def _centred_tree(depth=6, half=2):
    return DyadicTree(1, depth, corner=(Fr(-half),), side=Fr(2 * half))


def test_projection_examples(backend):
    tree = DyadicTree(1, 5)
    mu = RadonMeasure.uniform(tree)
    r = np.random.default_rng(0)
    f = random_function(tree, r)
    spec = ProjectionSpec.build(tree, 6)
    pn, perp = project(f, spec, mu)
    assert np.all(perp.values == 0)
    # N = depth - 1 drops exactly the deepest level
    spec = ProjectionSpec.build(tree, tree.depth - 1)
    assert not spec.lagom[tree.level_slice(tree.depth)].any()
    assert spec.lagom[1 : tree.level_slice(tree.depth).start].all()
    _, perp = project(f, spec, mu)
    ref = np.zeros(tree.n_leaves)
    for q in tree.cubes(tree.depth):
        h = haar_function(q, mu).realization.values
        ref += float((f.values * h * mu.leaf_mass).sum()) * h
    np.testing.assert_allclose(perp.values, ref, atol=1e-12)
    pn, perp = project(StepFunction.constant(tree, 7.0), spec, mu)
    assert np.abs(pn.values).max() < 1e-12 and np.abs(perp.values).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_projection_split_is_exact(seed, N):
    r = np.random.default_rng(seed)
    tree = DyadicTree(int(r.integers(1, 3)), int(r.integers(1, 4)), corner=None, side=1)
    mu = random_measure(tree, r)
    f = random_function(tree, r)
    spec = ProjectionSpec.build(tree, N)
    pn, perp = project(f, spec, mu)
    full = synthesize(analyze(f, mu)).values
    assert np.abs(pn.values + perp.values - full).max() <= 1e-10 * (1 + np.abs(full).max())
    P, Pp = projection_matrices(spec, mu)
    np.testing.assert_allclose(P @ f.values, pn.values, atol=1e-10 * (1 + np.abs(full).max()))
    # coefficient truncation is idempotent
    pn2, _ = project(pn, spec, mu)
    np.testing.assert_allclose(pn2.values, pn.values, atol=1e-9 * (1 + np.abs(full).max()))


@pytest.mark.parametrize("p", [Fr(3, 2), Fr(2), Fr(3), Fr(7, 5), Fr(11, 3)])
def test_exponent_identity(p):
    lhs, rhs = exponent_identity(p)
    assert lhs == rhs


def test_duality_of_constants(backend):
    r = np.random.default_rng(1)
    for _ in range(60):
        tree = random_tree(r, 64)
        mu = RadonMeasure(tree, r.uniform(0.2, 2, tree.n_leaves))
        w = random_weight(tree, r)
        eps = random_coefficients(tree, r)
        p = float(r.choice([1.25, 1.5, 2.0, 3.0]))
        lhs, rhs = dual_constants(w, mu, p, eps)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


def test_bound_constant_branches():
    tree = _centred_tree(4)
    mu = RadonMeasure.uniform(tree)
    w = Weight(tree, np.linspace(0.5, 2, tree.n_leaves))
    one = CoefficientField.constant(tree, 1.0)
    from sparsedom.measure import ap_constant

    assert bound_constant(w, mu, 3, one) == pytest.approx(ap_constant(w, mu, 3), rel=1e-14)
    assert bound_constant(w, mu, 1.5, one) == pytest.approx(ap_constant(w, mu, 1.5) ** 2, rel=1e-14)


def test_weighted_bound_zero_coefficients():
    tree = _centred_tree(5)
    mu = RadonMeasure.uniform(tree)
    w = random_weight(tree, np.random.default_rng(2))
    rep = weighted_bound_check(CoefficientField.constant(tree, 0.0), w, mu, 2, trials=5, rng=3)
    assert rep.max_ratio == 0 and all(x == 0 for x in rep.ratios)
    assert rep.exact_norm_l2 == 0.0


def _generalized_norm(A, wm):
    """sup ||A f||_{L^2(w)} / ||f||_{L^2(w)} via the generalized eigenproblem A^T D A v = s D v."""
    D = np.diag(wm)
    vals = scipy.linalg.eigh(A.T @ D @ A, D, eigvals_only=True)
    return math.sqrt(max(vals.max(), 0.0))


def test_weighted_norm_against_eigen_oracle():
    r = np.random.default_rng(4)
    for _ in range(15):
        tree = random_tree(r, 64)
        mu = RadonMeasure(tree, r.uniform(0.5, 2, tree.n_leaves))
        w = random_weight(tree, r)
        A = multiplier_matrix(random_coefficients(tree, r), mu)
        ref = _generalized_norm(A, w.values * mu.leaf_mass)
        assert weighted_operator_norm(A, w, mu) == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_weighted_bound_unit_weight_p2():
    tree = DyadicTree(1, 6)
    mu = RadonMeasure.uniform(tree)
    w = Weight(tree, np.ones(tree.n_leaves))
    rep = weighted_bound_check(CoefficientField.constant(tree, 1.0), w, mu, 2, trials=20, rng=5)
    A = multiplier_matrix(CoefficientField.constant(tree, 1.0), mu)
    assert rep.exact_norm_l2 == pytest.approx(_generalized_norm(A, mu.leaf_mass), rel=1e-8)
    assert rep.max_ratio <= rep.exact_norm_l2 * (1 + 1e-10)
    assert math.isfinite(rep.normalized_max)
    assert rep.exact_ok and rep.duality_gap <= 1e-8


def test_weighted_bound_proof_sets(backend):
    r = np.random.default_rng(6)
    for p in (1.5, 2.0, 3.0):
        for _ in range(4):
            tree = random_tree(r, 128)
            mu = RadonMeasure(tree, r.uniform(0.1, 2, tree.n_leaves))
            w = random_weight(tree, r)
            rep = weighted_bound_check(random_coefficients(tree, r), w, mu, p, trials=8, rng=r, holder_sets=200)
            assert rep.sets_disjoint and rep.sets_mass_ok and rep.holder_ok
            assert rep.duality_gap <= 1e-8
            assert math.isfinite(rep.normalized_max)


def test_holder_step_on_random_sets():
    r = np.random.default_rng(7)
    tree = DyadicTree(2, 3)
    mu = RadonMeasure(tree, r.uniform(0.1, 1, tree.n_leaves))
    for p in (1.5, 2.0, 4.0):
        w = random_weight(tree, r)
        pp = p / (p - 1)
        sigma = w.values ** (1 - pp)
        for _ in range(200):
            E = r.uniform(size=tree.n_leaves) < 0.4
            if not E.any():
                continue
            m = mu.leaf_mass[E].sum()
            rhs = (w.values * mu.leaf_mass)[E].sum() ** (1 / p) * (sigma * mu.leaf_mass)[E].sum() ** (1 / pp)
            assert m <= rhs * (1 + 1e-12)


def test_weighted_maximal_function_is_uniform_in_weight():
    r = np.random.default_rng(8)
    tree = DyadicTree(1, 7)
    mu = RadonMeasure.uniform(tree)
    for p in (1.5, 3.0):
        worst = max(maximal_weighted_ratio(random_weight(tree, r), mu, p, trials=10, rng=r) for _ in range(20))
        assert worst <= p / (p - 1)


def test_frame_constant_unit_weight():
    tree = DyadicTree(1, 5)
    mu = RadonMeasure.uniform(tree)
    # uniform Haar system is a tight frame with bound 1 on mean-zero functions
    assert weighted_frame_constant(Weight(tree, np.ones(tree.n_leaves)), mu) == pytest.approx(1.0, rel=1e-10)


def test_compactness_geometric_profile(backend):
    tree = _centred_tree(7)
    mu = RadonMeasure.uniform(tree)
    eps = CoefficientField.from_profile(tree, DecayProfile("geometric", {"rho_small": 0.5, "rho_large": 0.5}))
    w = Weight(tree, (np.abs(np.linspace(-2, 2, tree.n_leaves)) + 0.1) ** -0.4)
    for p in (1.5, 2.0, 3.0):
        rep = compactness_scan(eps, w, mu, p, [1, 2, 3, 4], trials=4, rng=1)
        ts = rep.column("tail_sup")
        for a, b in zip(ts, ts[1:]):
            assert abs(b / a - 0.5) <= 1e-10
        assert rep.all_bounds_ok and rep.tail_sup_nonincreasing and rep.decays
        assert all(r.sv_ok for r in rep.rows)
        bounds = rep.column("bound")
        for a, b in zip(bounds, bounds[1:]):
            assert abs(b / a - 0.5) <= 1e-10


def test_compactness_no_decay_and_finite_rank():
    tree = _centred_tree(6)
    mu = RadonMeasure.uniform(tree)
    w = Weight(tree, np.ones(tree.n_leaves))
    rep = compactness_scan(CoefficientField.constant(tree, 1.0), w, mu, 2, [1, 2, 3])
    assert rep.column("tail_sup") == [1.0, 1.0, 1.0] and not rep.decays
    r = np.random.default_rng(9)
    vals = r.uniform(0.5, 1.0, tree.n_cubes) * lagom_mask(tree, 2)
    rep = compactness_scan(CoefficientField(tree, vals), w, mu, 2, [1, 2, 3, 4])
    exact = rep.column("tail_norm_exact")
    assert exact[0] > 0
    assert exact[1:] == [0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        compactness_scan(CoefficientField(tree, vals), w, mu, 2, [2, 2])
