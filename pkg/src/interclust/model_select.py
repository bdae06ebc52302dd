"""Cluster validity indices and the parameter sweeps that pick k, eps,
min_pts and bandwidth."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .cluster_engine import (Labeling, as_array, birch, birch_subclusters, cut_linkage,
                             dbscan_from_graph, kmeans, mean_shift, radius_graph, ward_linkage)

logger = logging.getLogger(__name__)

# stands in for +inf when every cluster has zero scatter
CH_CAP = 1e15


def _labels_of(labeling) -> np.ndarray:
    return labeling.labels if isinstance(labeling, Labeling) else np.asarray(labeling)


def _clustered(X, labeling):
    """Non-noise rows with labels remapped to ``0..k-1``."""
    X = as_array(X)
    labels = _labels_of(labeling)
    keep = labels > 0
    uniq, lab = np.unique(labels[keep], return_inverse=True)
    return X[keep], lab, uniq.size


def silhouette(X, labeling) -> float:
    """Mean silhouette over non-noise samples; singletons score 0."""
    Xc, lab, k = _clustered(X, labeling)
    if k < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    sums = _kernels.cluster_distance_sums(Xc, lab, k)
    counts = np.bincount(lab, minlength=k).astype(np.float64)
    rows = np.arange(lab.size)
    own = counts[lab]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[rows, lab] / (own - 1)
        means = sums / counts
    means[rows, lab] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where((own > 1) & (denom > 0), (b - a) / denom, 0.0)
    return float(s.mean())


def calinski_harabasz(X, labeling) -> float:
    """Between/within dispersion ratio; :data:`CH_CAP` when within-scatter is zero."""
    Xc, lab, k = _clustered(X, labeling)
    n = lab.size
    if not 2 <= k < n:
        raise ValueError(f"Calinski-Harabasz needs 2 <= k < N (k={k}, N={n})")
    mean = Xc.mean(axis=0)
    between = within = 0.0
    for j in range(k):
        pts = Xc[lab == j]
        c = pts.mean(axis=0)
        between += pts.shape[0] * float(((c - mean) ** 2).sum())
        within += float(((pts - c) ** 2).sum())
    if within == 0.0:
        return CH_CAP
    return float(min(between * (n - k) / (within * (k - 1)), CH_CAP))


@dataclass(frozen=True)
class ValidityScore:
    k: int
    silhouette: float | None
    calinski_harabasz: float | None
    params: dict = field(default_factory=dict)


def score(X, labeling, params: dict | None = None) -> ValidityScore:
    labels = _labels_of(labeling)
    k = int(np.unique(labels[labels > 0]).size)
    n = int((labels > 0).sum())
    if k < 2 or k >= n:
        return ValidityScore(k, None, None, dict(params or {}))
    return ValidityScore(k, silhouette(X, labels), calinski_harabasz(X, labels), dict(params or {}))


@dataclass
class SweepResult:
    """Scores per parameter value plus the selection.

    For k sweeps ``chosen`` is the selected k; for grouped sweeps (min_pts,
    bandwidth) ``chosen`` is the parameter value and ``chosen_k`` the winning
    cluster count.
    """

    param_name: str
    rows: list[tuple[float, ValidityScore]]
    chosen: float | None
    chosen_k: int | None
    rule: str
    disagreement: bool = False
    groups: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["param", "k", "silhouette", "calinski_harabasz"])
            for value, sc in self.rows:
                w.writerow([_fmt(value), sc.k, _fmt(sc.silhouette), _fmt(sc.calinski_harabasz)])

    def groups_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "n_runs", "mean_silhouette", "mean_calinski_harabasz", "params"])
            for g in self.groups:
                w.writerow([g["k"], g["n_runs"], _fmt(g["silhouette"]), _fmt(g["calinski_harabasz"]),
                            " ".join(_fmt(v) for v in g["params"])])

    def summary(self) -> dict:
        return {"param": self.param_name, "chosen": self.chosen, "chosen_k": self.chosen_k,
                "rule": self.rule, "disagreement": self.disagreement, **self.extra}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def _argmax_first(values) -> int:
    return int(np.argmax(np.asarray(values, dtype=np.float64)))


def sweep_k(X, algorithm: str, k_min: int = 2, k_max: int = 11, seed: int = 0,
            birch_threshold: float = 0.5, birch_branching: int = 50) -> SweepResult:
    """Score k = k_min..k_max; choose the silhouette argmax (ties to smaller k)."""
    X = as_array(X)
    n = X.shape[0]
    if k_min < 2:
        raise ValueError("k_min must be >= 2")
    if k_max > n - 1:
        raise ValueError(f"k_max={k_max} exceeds N-1={n - 1}")
    if algorithm == "agglomerative":
        link = ward_linkage(X)
        run = lambda k: cut_linkage(link, k)  # noqa: E731
    elif algorithm == "kmeans":
        run = lambda k: kmeans(X, k, seed=seed)[0].labels  # noqa: E731
    elif algorithm == "birch":
        sub = birch_subclusters(X, birch_threshold, birch_branching)
        run = lambda k: birch(X, k, seed=seed, subclusters=sub).labels  # noqa: E731
    else:
        raise ValueError(f"k sweep does not apply to {algorithm!r}")
    k_cap = len(sub[0]) if algorithm == "birch" else n
    if k_cap < k_max:
        logger.warning("%s: only %d subclusters; k > %d is not scored", algorithm, k_cap, k_cap)
    rows = []
    for k in range(k_min, k_max + 1):
        sc = score(X, run(k), {"k": k}) if k <= k_cap else ValidityScore(k, None, None, {"k": k})
        rows.append((k, sc))
    sil = [r[1].silhouette if r[1].silhouette is not None else -np.inf for r in rows]
    ch = [r[1].calinski_harabasz if r[1].calinski_harabasz is not None else -np.inf for r in rows]
    if np.all(np.isneginf(sil)):
        return SweepResult("k", rows, None, None, "degenerate: no k could be scored",
                           extra={"algorithm": algorithm, "ch_choice": None})
    best = rows[_argmax_first(sil)][0]
    best_ch = rows[_argmax_first(ch)][0]
    if best != best_ch:
        logger.warning("%s: silhouette prefers k=%d, Calinski-Harabasz k=%d", algorithm, best, best_ch)
    return SweepResult("k", rows, best, best, "argmax silhouette", best != best_ch,
                       extra={"algorithm": algorithm, "ch_choice": best_ch})


@dataclass(frozen=True)
class KneeCurve:
    distances: np.ndarray
    knee_index: int
    eps: float
    k: int
    window: int


def kth_neighbor_distances(X, k: int, block: int = 512) -> np.ndarray:
    """Distance from each sample to its k-th nearest other sample."""
    X = as_array(X)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k={k} must satisfy 1 <= k < N={n}")
    out = np.empty(n)
    for s in range(0, n, block):
        diff = X[s:s + block, None, :] - X[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        # column k of the partition is the k-th neighbour once self (distance 0) sits at 0
        d2[np.arange(d2.shape[0]), np.arange(s, s + d2.shape[0])] = -1.0
        out[s:s + block] = np.sqrt(np.partition(d2, k, axis=1)[:, k])
    return out


def knee_index(curve, window: int | None = None) -> tuple[int, int]:
    """Index of the largest discrete second difference of the smoothed curve.

    Smoothing is a centred moving average of odd width applied twice, so a
    kink in a piecewise-linear curve maps to a single peak at the kink.
    Returns ``(index, window)``.
    """
    y = np.asarray(curve, dtype=np.float64)
    n = y.size
    if n < 3:
        raise ValueError("need at least 3 points to locate a knee")
    if window is None:
        window = max(3, n // 100)
    window += 1 - window % 2
    if n >= 2 * window + 1:
        box = np.ones(window) / window
        s = np.convolve(np.convolve(y, box, mode="valid"), box, mode="valid")
        offset = window - 1
    else:
        s, offset, window = y, 0, 1
    d2 = s[:-2] - 2 * s[1:-1] + s[2:]
    return int(np.argmax(d2)) + 1 + offset, window


def kdist_knee(X, k: int | None = None, window: int | None = None) -> KneeCurve:
    """Sorted k-distance curve (k defaults to twice the dimension) and its knee.

    A knee on a zero distance moves right to the first positive distance.
    """
    X = as_array(X)
    k = 2 * X.shape[1] if k is None else k
    dist = np.sort(kth_neighbor_distances(X, k))
    idx, w = knee_index(dist, window)
    if dist[idx] <= 0:
        # duplicated rows (common with Likert scores) can put the knee on a zero distance
        pos = np.flatnonzero(dist[idx:] > 0)
        if pos.size == 0:
            raise ValueError("every k-distance is zero; too many duplicate rows to estimate eps")
        idx += int(pos[0])
    return KneeCurve(dist, idx, float(dist[idx]), k, w)


def _grouped(param_name, rows, prefer):
    groups = defaultdict(list)
    for value, sc in rows:
        if sc.silhouette is not None:
            groups[sc.k].append((value, sc))
    table = []
    for k in sorted(groups):
        members = groups[k]
        table.append({"k": k, "n_runs": len(members),
                      "silhouette": float(np.mean([m[1].silhouette for m in members])),
                      "calinski_harabasz": float(np.mean([m[1].calinski_harabasz for m in members])),
                      "params": [m[0] for m in members]})
    if not table:
        return SweepResult(param_name, rows, None, None, "degenerate: no run produced 2+ clusters",
                           groups=table)
    win = table[_argmax_first([g["silhouette"] for g in table])]
    ch_win = table[_argmax_first([g["calinski_harabasz"] for g in table])]
    chosen = prefer(win["params"])
    return SweepResult(param_name, rows, chosen, win["k"],
                       "argmax mean silhouette over cluster counts", win["k"] != ch_win["k"], table,
                       {"ch_choice_k": ch_win["k"]})


def sweep_min_samples(X, eps: float, min_pts_range=range(1, 201)) -> SweepResult:
    """DBSCAN over a min_pts range at fixed eps, scores averaged per cluster count.

    The final min_pts is the smallest one reaching the winning cluster count.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    X = as_array(X)
    graph = radius_graph(X, eps)
    cache: dict[bytes, ValidityScore] = {}
    rows = []
    for m in min_pts_range:
        if m > X.shape[0]:
            break
        labels = dbscan_from_graph(graph, m)
        key = labels.tobytes()
        if key not in cache:
            cache[key] = score(X, labels)
        sc = cache[key]
        rows.append((m, ValidityScore(sc.k, sc.silhouette, sc.calinski_harabasz, {"min_pts": m, "eps": eps})))
    res = _grouped("min_pts", rows, min)
    res.extra["eps"] = eps
    return res


def bandwidth_grid(low: float = 0.1, high: float = 0.3, step: float = 0.01) -> np.ndarray:
    if not 0 < low <= high or step <= 0:
        raise ValueError("need 0 < low <= high and step > 0")
    n = int(round((high - low) / step)) + 1
    return np.round(low + step * np.arange(n), 10)


def sweep_bandwidth(X, bandwidths=None) -> SweepResult:
    """Mean shift over a bandwidth grid, scores averaged per cluster count.

    The final bandwidth is the largest one reaching the winning cluster count.
    """
    X = as_array(X)
    bandwidths = bandwidth_grid() if bandwidths is None else np.asarray(bandwidths, dtype=np.float64)
    rows = []
    for h in bandwidths:
        lab, _ = mean_shift(X, float(h))
        rows.append((float(h), score(X, lab, {"bandwidth": float(h)})))
    return _grouped("bandwidth", rows, max)
