# cython: language_level=3
"""Compiled hot kernels. Signatures mirror ``interclust._pure``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def cluster_distance_sums(X, labels, Py_ssize_t k):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t[::1] lab = np.ascontiguousarray(labels, dtype=np.intp)
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1]
    out_arr = np.zeros((n, k))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, f
    cdef double acc, t
    with nogil:
        for i in range(n):
            if lab[i] < 0:
                continue
            for j in range(i + 1, n):
                if lab[j] < 0:
                    continue
                acc = 0.0
                for f in range(p):
                    t = x[i, f] - x[j, f]
                    acc = acc + t * t
                acc = sqrt(acc)
                out[i, lab[j]] += acc
                out[j, lab[i]] += acc
    return out_arr


def ward_linkage(X):
    cdef double[:, ::1] cent = np.array(X, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = cent.shape[0], p = cent.shape[1]
    size_arr = np.ones(n)
    active_arr = np.ones(n, dtype=np.uint8)
    chain_arr = np.empty(n, dtype=np.intp)
    cdef double[::1] size = size_arr
    cdef unsigned char[::1] active = active_arr
    cdef Py_ssize_t[::1] chain = chain_arr
    left_arr = np.empty(max(n - 1, 0), dtype=np.intp)
    right_arr = np.empty(max(n - 1, 0), dtype=np.intp)
    height_arr = np.empty(max(n - 1, 0))
    msize_arr = np.empty(max(n - 1, 0), dtype=np.intp)
    cdef Py_ssize_t[::1] left = left_arr, right = right_arr, msize = msize_arr
    cdef double[::1] height = height_arr
    cdef Py_ssize_t m = 0, top = 0, a, b, j, f, lo, hi, prev
    cdef double best, d, t, tot, dprev
    with nogil:
        while m < n - 1:
            if top == 0:
                for j in range(n):
                    if active[j]:
                        chain[0] = j
                        top = 1
                        break
            a = chain[top - 1]
            best = INFINITY
            b = -1
            for j in range(n):
                if j == a or not active[j]:
                    continue
                d = 0.0
                for f in range(p):
                    t = cent[j, f] - cent[a, f]
                    d = d + t * t
                d = size[a] * size[j] / (size[a] + size[j]) * d
                if d < best:
                    best = d
                    b = j
            if top > 1:
                prev = chain[top - 2]
                dprev = 0.0
                for f in range(p):
                    t = cent[prev, f] - cent[a, f]
                    dprev = dprev + t * t
                dprev = size[a] * size[prev] / (size[a] + size[prev]) * dprev
                if dprev <= best:
                    b = prev
                    best = dprev
            if top > 1 and b == chain[top - 2]:
                top -= 2
                if a < b:
                    lo = a
                    hi = b
                else:
                    lo = b
                    hi = a
                left[m] = lo
                right[m] = hi
                height[m] = best
                tot = size[lo] + size[hi]
                for f in range(p):
                    cent[lo, f] = (size[lo] * cent[lo, f] + size[hi] * cent[hi, f]) / tot
                size[lo] = tot
                active[hi] = 0
                msize[m] = <Py_ssize_t>tot
                m += 1
            else:
                chain[top] = b
                top += 1
    return left_arr, right_arr, height_arr, msize_arr


def mean_shift_seeds(X, seeds, double bandwidth, Py_ssize_t max_iter, double tol):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    modes_arr = np.array(seeds, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] modes = modes_arr
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1], m = modes.shape[0]
    n_iter_arr = np.zeros(m, dtype=np.intp)
    cdef Py_ssize_t[::1] n_iter = n_iter_arr
    acc_arr = np.empty(p)
    cdef double[::1] acc = acc_arr
    cdef double h2 = bandwidth * bandwidth
    cdef Py_ssize_t s, it, i, f, count
    cdef double d, t, shift
    with nogil:
        for s in range(m):
            for it in range(1, max_iter + 1):
                for f in range(p):
                    acc[f] = 0.0
                count = 0
                for i in range(n):
                    d = 0.0
                    for f in range(p):
                        t = modes[s, f] - x[i, f]
                        d = d + t * t
                    if d <= h2:
                        count += 1
                        for f in range(p):
                            acc[f] += x[i, f]
                if count == 0:
                    break
                shift = 0.0
                for f in range(p):
                    t = acc[f] / count
                    shift += (t - modes[s, f]) * (t - modes[s, f])
                    modes[s, f] = t
                n_iter[s] = it
                if sqrt(shift) < tol:
                    break
    return modes_arr, n_iter_arr


def best_split(X, r, idx):
    cdef double[:, :] x = np.asarray(X, dtype=np.float64)
    cdef double[::1] res = np.ascontiguousarray(r, dtype=np.float64)
    idx_arr = np.ascontiguousarray(idx, dtype=np.intp)
    cdef Py_ssize_t[::1] ids = idx_arr
    cdef Py_ssize_t n = ids.shape[0], p = x.shape[1]
    cdef double best_gain = 0.0, best_t = 0.0
    cdef Py_ssize_t best_f = -1
    if n < 2:
        return best_gain, best_f, best_t
    cdef double total = 0.0, cs, nl, nr, gain, num, fgain, ft
    cdef Py_ssize_t i, j, f
    for i in range(n):
        total = total + res[ids[i]]
    vals_arr = np.empty(n)
    cdef double[::1] vals = vals_arr
    cdef Py_ssize_t[::1] order
    for f in range(p):
        for i in range(n):
            vals[i] = x[ids[i], f]
        order = np.argsort(vals_arr, kind="stable")
        cs = 0.0
        fgain = -1.0
        ft = 0.0
        for j in range(n - 1):
            cs = cs + res[ids[order[j]]]
            if vals[order[j + 1]] > vals[order[j]]:
                nl = j + 1.0
                nr = n - nl
                num = cs * nr - (total - cs) * nl
                gain = num * num / (n * nl * nr)
                if gain > fgain:
                    fgain = gain
                    ft = 0.5 * (vals[order[j]] + vals[order[j + 1]])
        if fgain > best_gain:
            best_gain = fgain
            best_f = f
            best_t = ft
    return best_gain, best_f, best_t


def predict_forest(feature, threshold, left, right, value, roots, tree_out, X, Py_ssize_t n_out):
    cdef Py_ssize_t[::1] feat = np.ascontiguousarray(feature, dtype=np.intp)
    cdef double[::1] thr = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef Py_ssize_t[::1] lft = np.ascontiguousarray(left, dtype=np.intp)
    cdef Py_ssize_t[::1] rgt = np.ascontiguousarray(right, dtype=np.intp)
    cdef double[::1] val = np.ascontiguousarray(value, dtype=np.float64)
    cdef Py_ssize_t[::1] rts = np.ascontiguousarray(roots, dtype=np.intp)
    cdef Py_ssize_t[::1] tout = np.ascontiguousarray(tree_out, dtype=np.intp)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], nt = rts.shape[0], i, t, node
    raw_arr = np.zeros((n, n_out))
    cdef double[:, ::1] raw = raw_arr
    with nogil:
        for i in range(n):
            for t in range(nt):
                node = rts[t]
                while feat[node] >= 0:
                    if x[i, feat[node]] <= thr[node]:
                        node = lft[node]
                    else:
                        node = rgt[node]
                raw[i, tout[t]] += val[node]
    return raw_arr
