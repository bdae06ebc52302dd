"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_core.pyx``.
Summation orders match the compiled versions where practical so both
backends agree to the last bit on the tree kernels and to rounding on the
distance kernels.
"""

import numpy as np

_BLOCK = 256


def cluster_distance_sums(X, labels, k):
    """Sum of Euclidean distances from every point to the members of each cluster.

    Points with a negative label are ignored both as sources and targets; their
    output rows are zero.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n = X.shape[0]
    out = np.zeros((n, k))
    keep = np.flatnonzero(labels >= 0)
    if keep.size == 0:
        return out
    Xk = X[keep]
    onehot = np.zeros((keep.size, k))
    onehot[np.arange(keep.size), labels[keep]] = 1.0
    for start in range(0, keep.size, _BLOCK):
        rows = keep[start:start + _BLOCK]
        diff = X[rows, None, :] - Xk[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        out[rows] = d @ onehot
    return out


def ward_linkage(X):
    """Ward agglomeration by the nearest-neighbour chain.

    Returns ``(left, right, height, size)`` in the order merges happen. ``left``
    and ``right`` are the smallest member indices of the two merged clusters,
    ``height`` is the increase in error sum of squares.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    cent = X.copy()
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    left = np.empty(n - 1, dtype=np.intp)
    right = np.empty(n - 1, dtype=np.intp)
    height = np.empty(n - 1)
    msize = np.empty(n - 1, dtype=np.intp)
    chain = []
    m = 0
    while m < n - 1:
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        a = chain[-1]
        diff = cent - cent[a]
        d = size[a] * size / (size[a] + size) * np.einsum("ij,ij->i", diff, diff)
        d[~active] = np.inf
        d[a] = np.inf
        b = int(np.argmin(d))
        if len(chain) > 1 and d[chain[-2]] <= d[b]:
            b = chain[-2]
        if len(chain) > 1 and b == chain[-2]:
            chain.pop()
            chain.pop()
            lo, hi = (a, b) if a < b else (b, a)
            left[m], right[m], height[m] = lo, hi, d[b]
            tot = size[lo] + size[hi]
            cent[lo] = (size[lo] * cent[lo] + size[hi] * cent[hi]) / tot
            size[lo] = tot
            active[hi] = False
            msize[m] = int(tot)
            m += 1
            # chain members below the merged pair keep their validity
        else:
            chain.append(b)
    return left, right, height, msize


def mean_shift_seeds(X, seeds, bandwidth, max_iter, tol):
    """Run flat-kernel mean shift from each seed until it stops moving.

    Returns ``(modes, n_iter)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    modes = np.array(seeds, dtype=np.float64, copy=True)
    n_iter = np.zeros(modes.shape[0], dtype=np.intp)
    h2 = bandwidth * bandwidth
    live = np.arange(modes.shape[0])
    it = 0
    while live.size and it < max_iter:
        it += 1
        still = []
        for start in range(0, live.size, _BLOCK):
            rows = live[start:start + _BLOCK]
            cur = modes[rows]
            diff = cur[:, None, :] - X[None, :, :]
            inside = np.einsum("ijk,ijk->ij", diff, diff) <= h2
            counts = inside.sum(axis=1)
            empty = counts == 0
            new = (inside.astype(np.float64) @ X) / np.maximum(counts, 1)[:, None]
            new[empty] = cur[empty]
            shift = np.sqrt(((new - cur) ** 2).sum(axis=1))
            modes[rows] = new
            n_iter[rows] = it
            still.append(rows[shift >= tol])
        live = np.concatenate(still) if still else live[:0]
    return modes, n_iter


def best_split(X, r, idx):
    """Best variance-reduction split of the samples ``idx`` on residuals ``r``.

    Thresholds are midpoints between adjacent distinct values. Ties keep the
    lowest feature, then the lowest threshold. Returns
    ``(gain, feature, threshold)`` with ``feature == -1`` when no split exists.
    """
    idx = np.asarray(idx, dtype=np.intp)
    n = idx.size
    best_gain, best_f, best_t = 0.0, -1, 0.0
    if n < 2:
        return best_gain, best_f, best_t
    rr = r[idx]
    total = float(np.cumsum(rr)[-1])
    for f in range(X.shape[1]):
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        cs = np.cumsum(rr[order])[:-1]
        valid = vs[1:] > vs[:-1]
        if not valid.any():
            continue
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        gain = (cs * nr - (total - cs) * nl) ** 2 / (n * nl * nr)
        gain[~valid] = -1.0
        j = int(np.argmax(gain))
        if gain[j] > best_gain:
            best_gain = float(gain[j])
            best_f = f
            best_t = 0.5 * (vs[j] + vs[j + 1])
    return best_gain, best_f, best_t


def predict_forest(feature, threshold, left, right, value, roots, tree_out, X, n_out):
    """Sum leaf values of every tree into the output column the tree feeds."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    raw = np.zeros((n, n_out))
    rows = np.arange(n)
    for t in range(roots.size):
        node = np.full(n, roots[t], dtype=np.intp)
        todo = rows[feature[node] >= 0]
        while todo.size:
            nd = node[todo]
            go_left = X[todo, feature[nd]] <= threshold[nd]
            node[todo] = np.where(go_left, left[nd], right[nd])
            todo = todo[feature[node[todo]] >= 0]
        raw[:, tree_out[t]] += value[node]
    return raw
