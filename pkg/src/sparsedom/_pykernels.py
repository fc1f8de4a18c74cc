"""Reference numpy implementations of the tree kernels.

Cube data is stored in flat arrays indexed by global id: level ``l``
occupies ``[offset(l), offset(l) + b**l)`` with ``b = 2**dim`` and cubes
inside a level listed in Morton order.  Leaves are the last level.
"""
import numpy as np


def level_offsets(bits, depth):
    b = 1 << bits
    return np.array([(b**l - 1) // (b - 1) for l in range(depth + 2)], dtype=np.int64)


def cube_sums(leaf_vals, bits, depth):
    """Sum leaf values into every cube of the tree."""
    leaf_vals = np.asarray(leaf_vals, dtype=np.float64)
    off = level_offsets(bits, depth)
    out = np.empty(off[-1], dtype=np.float64)
    out[off[depth]:off[depth + 1]] = leaf_vals
    b = 1 << bits
    for l in range(depth - 1, -1, -1):
        child = out[off[l + 1]:off[l + 2]]
        out[off[l]:off[l + 1]] = child.reshape(-1, b).sum(axis=1)
    return out


def ancestor_table(cube_vals, bits, depth):
    """Matrix whose row x lists the values of x's ancestors, root first."""
    cube_vals = np.asarray(cube_vals, dtype=np.float64)
    off = level_offsets(bits, depth)
    if cube_vals.shape[0] != off[-1]:
        raise ValueError(f"cube_vals has length {cube_vals.shape[0]}, expected {off[-1]}")
    nleaf = 1 << (bits * depth)
    leaves = np.arange(nleaf, dtype=np.int64)
    table = np.empty((nleaf, depth + 1), dtype=np.float64)
    for l in range(depth + 1):
        table[:, l] = cube_vals[off[l] + (leaves >> (bits * (depth - l)))]
    return table


def ancestor_max(cube_vals, bits, depth):
    """Max of cube values over the ancestors of each leaf, ignoring NaN.

    Leaves whose ancestors are all NaN get -inf.
    """
    t = ancestor_table(cube_vals, bits, depth)
    t = np.where(np.isnan(t), -np.inf, t)
    return t.max(axis=1)


def ancestor_scan(cube_vals, bits, depth):
    """Running sum of cube values from the root down to each leaf.

    Returns ``(total, maxabs)`` where ``maxabs`` is the largest absolute
    partial sum, the empty sum included.
    """
    t = ancestor_table(cube_vals, bits, depth)
    s = np.cumsum(t, axis=1)
    return s[:, -1].copy(), np.maximum(np.abs(s).max(axis=1), 0.0)


def maximal_cubes(mask, bits, depth):
    """Global ids of the maximal cubes all of whose leaves are set."""
    mask = np.asarray(mask, dtype=bool)
    off = level_offsets(bits, depth)
    b = 1 << bits
    full = [None] * (depth + 1)
    full[depth] = mask
    for l in range(depth - 1, -1, -1):
        full[l] = full[l + 1].reshape(-1, b).all(axis=1)
    out = [np.flatnonzero(full[0]) + off[0]]
    for l in range(1, depth + 1):
        parent_full = np.repeat(full[l - 1], b)
        out.append(np.flatnonzero(full[l] & ~parent_full) + off[l])
    return np.concatenate(out).astype(np.int64)


def weak_sup(values, masses):
    """Exact sup over lambda > 0 of lambda * mass{|values| > lambda}.

    The sup is attained in the limit lambda -> v from below at a value v
    of |values|, so it equals max over v of v * mass{|values| >= v}.
    """
    v = np.abs(np.asarray(values, dtype=np.float64)).ravel()
    m = np.asarray(masses, dtype=np.float64).ravel()
    keep = (v > 0) & (m > 0)
    v, m = v[keep], m[keep]
    if v.size == 0:
        return 0.0
    order = np.argsort(-v, kind="stable")
    v, m = v[order], m[order]
    cum = np.cumsum(m)
    # ties: mass{|f| >= v} must include every entry equal to v
    last = np.r_[v[1:] != v[:-1], True]
    return float(np.max(v[last] * cum[last]))
