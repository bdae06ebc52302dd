"""The five clustering algorithms: K-means, DBSCAN, Ward agglomerative,
mean shift and BIRCH.

All distances are Euclidean on the raw factor scores. Every algorithm returns
a :class:`Labeling` whose clusters are numbered ``1..k`` in order of their
smallest member index; ``0`` marks DBSCAN noise.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .dataset import FeatureMatrix

NOISE = 0
ALGORITHMS = ("kmeans", "dbscan", "agglomerative", "mean_shift", "birch")


def as_array(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.values
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


@dataclass(frozen=True)
class Labeling:
    algorithm: str
    labels: np.ndarray
    params: dict = field(default_factory=dict)
    seed: int | None = None
    objective: float | None = None
    info: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def noise_mask(self) -> np.ndarray:
        return self.labels == NOISE

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max(initial=0))

    def sizes(self) -> np.ndarray:
        """Member counts of clusters ``1..k`` (noise excluded)."""
        return np.bincount(self.labels, minlength=self.n_clusters + 1)[1:]

    def metadata(self) -> dict:
        return {"algorithm": self.algorithm, "params": self.params, "seed": self.seed,
                "objective": self.objective, "n_clusters": self.n_clusters,
                "n_noise": int(self.noise_mask.sum()), "sizes": self.sizes().tolist()}

    def save(self, csv_path: str | Path, ids) -> None:
        """Write ``id,label`` CSV plus a ``.json`` metadata sidecar."""
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "label"])
            w.writerows(zip(ids, self.labels.tolist()))
        csv_path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path: str | Path) -> tuple["Labeling", list[str]]:
        csv_path = Path(csv_path)
        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        lab = cls(meta["algorithm"], np.array([int(r[1]) for r in rows], dtype=np.intp),
                  meta["params"], meta["seed"], meta["objective"])
        return lab, [r[0] for r in rows]


def canonical_labels(raw) -> np.ndarray:
    """Renumber non-negative cluster ids ``1..k`` by first appearance; negatives become noise."""
    raw = np.asarray(raw)
    out = np.zeros(raw.shape, dtype=np.intp)
    valid = raw >= 0
    if not valid.any():
        return out
    uniq, first, inverse = np.unique(raw[valid], return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.intp)
    rank[np.argsort(first, kind="stable")] = np.arange(1, uniq.size + 1)
    out[valid] = rank[inverse]
    return out


def _sqdist(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


# -- K-means -----------------------------------------------------------------

def _kmeans_pp(X, w, k, rng):
    """Greedy k-means++: each pick is the best of ``2 + log k`` D^2-sampled candidates."""
    n = X.shape[0]
    trials = 2 + int(np.log(k))
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.choice(n, p=w / w.sum())]
    d2 = _sqdist(X, centers[:1])[:, 0]
    for j in range(1, k):
        prob = w * d2
        tot = prob.sum()
        cand = rng.choice(n, size=trials, p=prob / tot) if tot > 0 \
            else rng.choice(n, size=trials, p=w / w.sum())
        cand_d2 = np.minimum(d2[None, :], _sqdist(X[cand], X))
        pick = int(np.argmin(cand_d2 @ w))
        centers[j] = X[cand[pick]]
        d2 = cand_d2[pick]
    return centers


def _assign(X, centers):
    d2 = _sqdist(X, centers)
    labels = np.argmin(d2, axis=1)
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        # re-seed an empty cluster with the point farthest from its centroid
        own = d2[np.arange(X.shape[0]), labels].copy()
        own[counts[labels] <= 1] = -1.0
        i = int(np.argmax(own))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] = 1
    return labels


def _update(X, w, labels, k):
    wsum = np.bincount(labels, weights=w, minlength=k)
    centers = np.empty((k, X.shape[1]))
    for f in range(X.shape[1]):
        centers[:, f] = np.bincount(labels, weights=w * X[:, f], minlength=k)
    return centers / wsum[:, None]


def _sse(X, w, labels, centers):
    diff = X - centers[labels]
    return float(np.sum(w * np.einsum("ij,ij->i", diff, diff)))


def _lloyd(X, w, centers, max_iter, tol):
    k = centers.shape[0]
    labels = _assign(X, centers)
    history = []
    for _ in range(max_iter):
        new_centers = _update(X, w, labels, k)
        history.append(_sse(X, w, labels, new_centers))
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break
        new_labels = _assign(X, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers, history


def _hartigan(X, w, labels, k, max_pass=100):
    """Single-point transfers that strictly lower the objective.

    A vectorised screen finds the points with an improving move; those are
    re-checked one by one against the running centroids. Stops when the
    screen finds nothing. Returns ``(labels, moved)``.
    """
    labels = labels.copy()
    W = np.bincount(labels, weights=w, minlength=k)
    centers = _update(X, w, labels, k)
    moved = False
    rows = np.arange(X.shape[0])
    for _ in range(max_pass):
        d2 = _sqdist(X, centers)
        Wa = W[labels]
        with np.errstate(divide="ignore", invalid="ignore"):
            remove = np.where(Wa > w, w * Wa / (Wa - w) * d2[rows, labels], 0.0)
        add = w[:, None] * W / (W + w[:, None]) * d2
        add[rows, labels] = np.inf
        cand = np.flatnonzero(add.min(axis=1) < remove * (1 - 1e-12))
        if cand.size == 0:
            break
        for i in cand:
            a = labels[i]
            wi = w[i]
            if W[a] - wi <= 0:
                continue
            di = ((centers - X[i]) ** 2).sum(axis=1)
            gain_add = wi * W / (W + wi) * di
            gain_add[a] = np.inf
            b = int(np.argmin(gain_add))
            if gain_add[b] < wi * W[a] / (W[a] - wi) * di[a] * (1 - 1e-12):
                centers[a] = (W[a] * centers[a] - wi * X[i]) / (W[a] - wi)
                centers[b] = (W[b] * centers[b] + wi * X[i]) / (W[b] + wi)
                W[a] -= wi
                W[b] += wi
                labels[i] = b
                moved = True
    return labels, moved


def _fit_once(X, w, centers, max_iter, tol):
    k = centers.shape[0]
    labels, centers, hist = _lloyd(X, w, centers, max_iter, tol)
    if k == 1:
        return labels, centers, hist
    refined, moved = _hartigan(X, w, labels, k)
    if moved:
        labels2, centers2, hist2 = _lloyd(X, w, _update(X, w, refined, k), max_iter, tol)
        if hist2[-1] <= hist[-1]:
            return labels2, centers2, hist + hist2
    return labels, centers, hist


def kmeans(X, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-10,
           n_init: int = 10, sample_weight=None) -> tuple[Labeling, np.ndarray]:
    """Lloyd's algorithm with greedy k-means++ seeding, polished by Hartigan
    single-point transfers; best of ``n_init`` restarts.

    ``objective`` is the (weighted) sum of squared distances to the assigned
    centroid. Returns the labeling and the ``k x p`` centroids, rows ordered
    like the cluster numbers.
    """
    X = as_array(X)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, centers, hist = _fit_once(X, w, _kmeans_pp(X, w, k, rng), max_iter, tol)
        if best is None or hist[-1] < best[2][-1]:
            best = (labels, centers, hist)
    labels, centers, hist = best
    canon = canonical_labels(labels)
    order = np.empty(k, dtype=np.intp)
    order[canon - 1] = labels
    lab = Labeling("kmeans", canon, {"k": k, "n_init": n_init, "max_iter": max_iter, "tol": tol},
                   seed, hist[-1], {"history": hist})
    return lab, centers[order]


# -- DBSCAN ------------------------------------------------------------------

def radius_graph(X, eps: float, block: int = 512) -> csr_matrix:
    """Boolean adjacency of pairs within distance ``eps`` (self loops included)."""
    X = as_array(X)
    n = X.shape[0]
    e2 = eps * eps
    rows, cols = [], []
    for start in range(0, n, block):
        d2 = _sqdist(X[start:start + block], X)
        r, c = np.nonzero(d2 <= e2)
        rows.append((r + start).astype(np.int32))
        cols.append(c.astype(np.int32))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    g = coo_matrix((np.ones(r.size, dtype=bool), (r, c)), shape=(n, n)).tocsr()
    g.sort_indices()
    return g


def dbscan_from_graph(graph: csr_matrix, min_pts: int) -> np.ndarray:
    """DBSCAN labels from a precomputed neighbourhood graph."""
    n = graph.shape[0]
    degree = np.diff(graph.indptr)
    core = np.flatnonzero(degree >= min_pts)
    raw = np.full(n, -1, dtype=np.intp)
    if core.size == 0:
        return canonical_labels(raw)
    n_comp, comp = connected_components(graph[core][:, core], directed=False)
    # number clusters in discovery order: by their lowest-index core point
    first_core = np.full(n_comp, n, dtype=np.intp)
    np.minimum.at(first_core, comp, core)
    order = np.empty(n_comp, dtype=np.intp)
    order[np.argsort(first_core, kind="stable")] = np.arange(n_comp)
    comp = order[comp]
    raw[core] = comp
    is_core = np.zeros(n, dtype=bool)
    is_core[core] = True
    border = np.flatnonzero(~is_core)
    if border.size:
        sub = graph[border][:, core]
        has = np.diff(sub.indptr) > 0
        if has.any():
            starts = sub.indptr[:-1][has]
            raw[border[has]] = np.minimum.reduceat(comp[sub.indices], starts)
    return canonical_labels(raw)


def dbscan(X, eps: float, min_pts: int) -> Labeling:
    """Density clustering; a point is core when at least ``min_pts`` points
    (itself included) lie within ``eps``. Clusters are discovered in order of
    their lowest-index core point, and a border point reachable from several
    clusters joins the first one discovered."""
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    labels = dbscan_from_graph(radius_graph(X, eps), min_pts)
    return Labeling("dbscan", labels, {"eps": float(eps), "min_pts": int(min_pts)})


# -- Ward agglomerative ------------------------------------------------------

@dataclass(frozen=True)
class Linkage:
    """Merges sorted by height; ``left``/``right`` are representative point indices."""
    left: np.ndarray
    right: np.ndarray
    height: np.ndarray
    size: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.left.size + 1


def ward_linkage(X) -> Linkage:
    X = as_array(X)
    left, right, height, size = _kernels.ward_linkage(X)
    order = np.argsort(height, kind="stable")
    return Linkage(left[order], right[order], height[order], size[order])


def cut_linkage(link: Linkage, k: int) -> np.ndarray:
    n = link.n_samples
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    m = n - k
    g = coo_matrix((np.ones(m), (link.left[:m], link.right[:m])), shape=(n, n))
    _, comp = connected_components(g, directed=False)
    return canonical_labels(comp)


def agglomerative_ward(X, k: int, linkage: Linkage | None = None) -> Labeling:
    """Ward's minimum-variance hierarchy cut at ``k`` clusters.

    ``objective`` is the total within-cluster error sum of squares at the cut.
    """
    link = linkage if linkage is not None else ward_linkage(X)
    labels = cut_linkage(link, k)
    ess = float(link.height[:link.n_samples - k].sum())
    return Labeling("agglomerative", labels, {"k": k, "linkage": "ward"}, None, ess)


# -- Mean shift --------------------------------------------------------------

def _unique_rows(X):
    _, first = np.unique(X, axis=0, return_index=True)
    return np.sort(first)


def _count_within(points, X, radius, block=256):
    r2 = radius * radius
    out = np.empty(points.shape[0], dtype=np.intp)
    for s in range(0, points.shape[0], block):
        out[s:s + block] = (_sqdist(points[s:s + block], X) <= r2).sum(axis=1)
    return out


def mean_shift(X, bandwidth: float, max_iter: int = 300, tol: float = 1e-8,
               seeds=None) -> tuple[Labeling, np.ndarray]:
    """Flat-kernel mean shift seeded from every distinct data point.

    Converged modes closer than ``bandwidth`` are merged, keeping the one with
    more points in its window; every point then joins its nearest mode.
    Returns the labeling and the modes ordered like the cluster numbers.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    X = as_array(X)
    seeds = X[_unique_rows(X)] if seeds is None else np.asarray(seeds, dtype=np.float64)
    modes, n_iter = _kernels.mean_shift_seeds(X, seeds, float(bandwidth), int(max_iter), float(tol))
    support = _count_within(modes, X, bandwidth)
    order = np.lexsort((np.arange(modes.shape[0]), -support))
    kept: list[int] = []
    h2 = bandwidth * bandwidth
    for i in order:
        if kept:
            d2 = ((modes[kept] - modes[i]) ** 2).sum(axis=1)
            if (d2 < h2).any():
                continue
        kept.append(int(i))
    centers = modes[kept]
    nearest = np.empty(X.shape[0], dtype=np.intp)
    for s in range(0, X.shape[0], 1024):
        nearest[s:s + 1024] = np.argmin(_sqdist(X[s:s + 1024], centers), axis=1)
    labels = canonical_labels(nearest)
    used = np.empty(labels.max(), dtype=np.intp)
    used[labels - 1] = nearest
    lab = Labeling("mean_shift", labels, {"bandwidth": float(bandwidth), "max_iter": max_iter, "tol": tol},
                   info={"n_seeds": int(seeds.shape[0]), "max_seed_iter": int(n_iter.max(initial=0))})
    return lab, centers[used]


# -- BIRCH -------------------------------------------------------------------

class _Node:
    """CF-tree node; each entry is a clustering feature (count, linear sum,
    squared sum) plus a child node (internal) or member list (leaf)."""

    __slots__ = ("leaf", "n", "ls", "ss", "kids")

    def __init__(self, leaf: bool, p: int):
        self.leaf = leaf
        self.n = np.empty(0)
        self.ls = np.empty((0, p))
        self.ss = np.empty(0)
        self.kids: list = []

    def append(self, n, ls, ss, kid):
        self.n = np.append(self.n, n)
        self.ls = np.vstack([self.ls, ls])
        self.ss = np.append(self.ss, ss)
        self.kids.append(kid)

    def summary(self):
        return self.n.sum(), self.ls.sum(axis=0), self.ss.sum()

    def closest(self, x) -> int:
        cent = self.ls / self.n[:, None]
        return int(np.argmin(((cent - x) ** 2).sum(axis=1)))


def _cf_radius(n, ls, ss):
    return float(np.sqrt(max(ss / n - float(ls @ ls) / (n * n), 0.0)))


class CFTree:
    def __init__(self, threshold: float, branching: int, p: int):
        self.threshold = threshold
        self.branching = branching
        self.p = p
        self.root = _Node(True, p)

    def insert(self, x, idx: int) -> None:
        split = self._insert(self.root, x, idx)
        if split is not None:
            root = _Node(False, self.p)
            for node in split:
                root.append(*node.summary(), node)
            self.root = root

    def _insert(self, node, x, idx):
        xx = float(x @ x)
        if node.leaf:
            if node.kids:
                j = node.closest(x)
                if _cf_radius(node.n[j] + 1, node.ls[j] + x, node.ss[j] + xx) <= self.threshold:
                    node.n[j] += 1
                    node.ls[j] += x
                    node.ss[j] += xx
                    node.kids[j].append(idx)
                    return None
            node.append(1.0, x, xx, [idx])
        else:
            j = node.closest(x)
            split = self._insert(node.kids[j], x, idx)
            if split is None:
                node.n[j] += 1
                node.ls[j] += x
                node.ss[j] += xx
            else:
                a, b = split
                node.n[j], node.ls[j], node.ss[j] = a.summary()
                node.kids[j] = a
                node.append(*b.summary(), b)
        if len(node.kids) > self.branching:
            return self._split(node)
        return None

    def _split(self, node):
        cent = node.ls / node.n[:, None]
        d2 = _sqdist(cent, cent)
        s1, s2 = np.unravel_index(np.argmax(d2), d2.shape)
        to_second = d2[:, s2] < d2[:, s1]
        halves = []
        for mask in (~to_second, to_second):
            new = _Node(node.leaf, self.p)
            sel = np.flatnonzero(mask)
            new.n, new.ls, new.ss = node.n[sel], node.ls[sel], node.ss[sel]
            new.kids = [node.kids[i] for i in sel]
            halves.append(new)
        return halves

    def leaf_entries(self):
        """``(count, linear sum, members)`` of every leaf subcluster."""
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.leaf:
                out.extend(zip(node.n, node.ls, node.kids))
            else:
                stack.extend(reversed(node.kids))
        return out


def build_cf_tree(X, threshold: float = 0.5, branching: int = 50) -> CFTree:
    X = as_array(X)
    tree = CFTree(threshold, branching, X.shape[1])
    for i in range(X.shape[0]):
        tree.insert(X[i], i)
    return tree


def birch_subclusters(X, threshold: float = 0.5, branching: int = 50):
    """Leaf subclusters ordered by smallest member: ``(weights, centroids, members)``."""
    if threshold <= 0 or branching < 2:
        raise ValueError("need threshold > 0 and branching >= 2")
    entries = build_cf_tree(X, threshold, branching).leaf_entries()
    entries.sort(key=lambda e: min(e[2]))
    weights = np.array([e[0] for e in entries])
    centroids = np.array([e[1] / e[0] for e in entries])
    return weights, centroids, [np.array(e[2], dtype=np.intp) for e in entries]


def birch(X, k: int, threshold: float = 0.5, branching: int = 50, seed: int = 0,
          subclusters=None) -> Labeling:
    """CF-tree compression followed by weighted K-means over the leaf subclusters."""
    if k < 1:
        raise ValueError("k must be >= 1")
    X = as_array(X)
    weights, centroids, members = subclusters if subclusters is not None \
        else birch_subclusters(X, threshold, branching)
    if len(members) < k:
        raise ValueError(f"BIRCH produced {len(members)} subclusters, fewer than k={k}; lower the threshold")
    glab, _ = kmeans(centroids, k, seed=seed, sample_weight=weights)
    raw = np.empty(X.shape[0], dtype=np.intp)
    for g, mem in zip(glab.labels, members):
        raw[mem] = g
    return Labeling("birch", canonical_labels(raw),
                    {"k": k, "threshold": float(threshold), "branching": int(branching)},
                    seed, glab.objective, {"n_subclusters": len(members)})
