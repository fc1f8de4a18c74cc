# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the tree kernels (same API as _pykernels)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isnan, INFINITY

cnp.import_array()


cdef inline Py_ssize_t _offset(int bits, int level):
    return (((<Py_ssize_t>1) << (bits * level)) - 1) // (((<Py_ssize_t>1) << bits) - 1)


cdef _check_len(str what, Py_ssize_t got, Py_ssize_t want):
    if got != want:
        raise ValueError(f"{what} has length {got}, expected {want}")


def cube_sums(leaf_vals, int bits, int depth):
    cdef const double[::1] lv = np.ascontiguousarray(leaf_vals, dtype=np.float64)
    cdef Py_ssize_t total = _offset(bits, depth + 1)
    out_arr = np.empty(total, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t b = (<Py_ssize_t>1) << bits
    cdef Py_ssize_t i, k, j, o, oc, n
    cdef double s
    o = _offset(bits, depth)
    n = lv.shape[0]
    _check_len("leaf_vals", n, (<Py_ssize_t>1) << (bits * depth))
    for i in range(n):
        out[o + i] = lv[i]
    cdef int l
    for l in range(depth - 1, -1, -1):
        o = _offset(bits, l)
        oc = _offset(bits, l + 1)
        n = (<Py_ssize_t>1) << (bits * l)
        for k in range(n):
            s = 0.0
            for j in range(b):
                s += out[oc + k * b + j]
            out[o + k] = s
    return out_arr


def ancestor_table(cube_vals, int bits, int depth):
    cdef const double[::1] cv = np.ascontiguousarray(cube_vals, dtype=np.float64)
    _check_len("cube_vals", cv.shape[0], _offset(bits, depth + 1))
    cdef Py_ssize_t nleaf = (<Py_ssize_t>1) << (bits * depth)
    out_arr = np.empty((nleaf, depth + 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t x
    cdef int l
    for x in range(nleaf):
        for l in range(depth + 1):
            out[x, l] = cv[_offset(bits, l) + (x >> (bits * (depth - l)))]
    return out_arr


def ancestor_max(cube_vals, int bits, int depth):
    cdef const double[::1] cv = np.ascontiguousarray(cube_vals, dtype=np.float64)
    _check_len("cube_vals", cv.shape[0], _offset(bits, depth + 1))
    cdef Py_ssize_t nleaf = (<Py_ssize_t>1) << (bits * depth)
    out_arr = np.empty(nleaf, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t x
    cdef int l
    cdef double m, v
    for x in range(nleaf):
        m = -INFINITY
        for l in range(depth + 1):
            v = cv[_offset(bits, l) + (x >> (bits * (depth - l)))]
            if not isnan(v) and v > m:
                m = v
        out[x] = m
    return out_arr


def ancestor_scan(cube_vals, int bits, int depth):
    cdef const double[::1] cv = np.ascontiguousarray(cube_vals, dtype=np.float64)
    _check_len("cube_vals", cv.shape[0], _offset(bits, depth + 1))
    cdef Py_ssize_t nleaf = (<Py_ssize_t>1) << (bits * depth)
    tot_arr = np.empty(nleaf, dtype=np.float64)
    mx_arr = np.empty(nleaf, dtype=np.float64)
    cdef double[::1] tot = tot_arr
    cdef double[::1] mx = mx_arr
    cdef Py_ssize_t x
    cdef int l
    cdef double s, m
    for x in range(nleaf):
        s = 0.0
        m = 0.0
        for l in range(depth + 1):
            s += cv[_offset(bits, l) + (x >> (bits * (depth - l)))]
            if fabs(s) > m:
                m = fabs(s)
        tot[x] = s
        mx[x] = m
    return tot_arr, mx_arr


def maximal_cubes(mask, int bits, int depth):
    cdef const cnp.uint8_t[::1] mk = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t total = _offset(bits, depth + 1)
    full_arr = np.zeros(total, dtype=np.uint8)
    cdef cnp.uint8_t[::1] full = full_arr
    cdef Py_ssize_t b = (<Py_ssize_t>1) << bits
    cdef Py_ssize_t i, k, j, o, oc, n
    cdef int l
    cdef cnp.uint8_t a
    o = _offset(bits, depth)
    n = mk.shape[0]
    _check_len("mask", n, (<Py_ssize_t>1) << (bits * depth))
    for i in range(n):
        full[o + i] = 1 if mk[i] else 0
    for l in range(depth - 1, -1, -1):
        o = _offset(bits, l)
        oc = _offset(bits, l + 1)
        n = (<Py_ssize_t>1) << (bits * l)
        for k in range(n):
            a = 1
            for j in range(b):
                if not full[oc + k * b + j]:
                    a = 0
                    break
            full[o + k] = a
    out = []
    if full[0]:
        out.append(0)
    for l in range(1, depth + 1):
        o = _offset(bits, l)
        oc = _offset(bits, l - 1)
        n = (<Py_ssize_t>1) << (bits * l)
        for k in range(n):
            if full[o + k] and not full[oc + (k >> bits)]:
                out.append(o + k)
    return np.array(out, dtype=np.int64)


def weak_sup(values, masses):
    cdef double[::1] v = np.abs(np.ascontiguousarray(values, dtype=np.float64).ravel())
    cdef const double[::1] m = np.ascontiguousarray(masses, dtype=np.float64).ravel()
    cdef Py_ssize_t[::1] order = np.argsort(-np.asarray(v), kind="stable").astype(np.intp)
    cdef Py_ssize_t n = v.shape[0], i, idx
    _check_len("masses", m.shape[0], n)
    cdef double cum = 0.0, best = 0.0, cur
    for i in range(n):
        idx = order[i]
        if v[idx] <= 0:
            break
        if m[idx] > 0:
            cum += m[idx]
        cur = v[idx]
        if i + 1 < n and v[order[i + 1]] == cur:
            continue
        if cur * cum > best:
            best = cur * cum
    return best
