"""Compact Calderon-Zygmund kernels, their decay coefficients and sparse bounds."""
from .coefficients import (
    EpsCoefficientReport,
    SmoothnessReport,
    bmo_tail,
    dyadic_bmo,
    eps_bar,
    eps_coefficients,
    rdist_to_unit_cube,
    smoothness_difference_bound,
    weak_compactness_test,
)
from .construction import CZOSparseReport, CZOSparseResult, build_sparse_czo, profile_sweep
from .kernel import (
    CompactCZKernel,
    KernelOperator,
    KernelSampleReport,
    paraproduct,
    paraproduct_matrix,
    sample_kernel_constants,
)
from .profiles import DTildeTable, ScalarProfile, Transforms, W, dini_integral, L_tilde, modulus_power


def dini_transforms(kernel: CompactCZKernel, tree, q, t_values=()):
    """(W at the given t, L~(l(Q)), D~(rdist(Q, unit cube))) for a tree cube Q."""
    import numpy as np

    box = tree.box(q)
    lo = np.array([float(c) for c in box.corner])
    s = float(box.side)
    r = float(rdist_to_unit_cube(lo[None, :], np.array([s]))[0])
    tr = kernel.transforms(max(2.0 * r, 4.0))
    wv = [W(kernel.omega, float(t)) for t in t_values]
    return wv, float(tr.L_tilde(np.array([s]))[0]), float(tr.D_tilde(r))
