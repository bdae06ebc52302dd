"""Model explanations: PDP/ICE, the step-fit dependence score (QPDP), exact
Shapley values, permutation importance, and a mean-rank consensus over them.

The response explained everywhere is the model's probability of the second
class (cluster 2). A model is anything with ``positive_proba(X)``, or a plain
callable ``X -> response``; permutation importance needs ``predict(X)`` or a
callable ``X -> labels``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .cluster_engine import as_array

EPSILON = 1e-8
GRID_SIZE = 50
D_INIT = 1e4
MAX_EXACT_FEATURES = 12
RESPONSE = "probability of class 2"
_ROW_BLOCK = 1 << 18


class DegenerateCurveError(ValueError):
    """Raised when a partial dependence curve cannot be normalized."""


def response_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "positive_proba"):
        return model.positive_proba
    if callable(model):
        return model
    raise TypeError("model must provide positive_proba(X) or be callable")


def _predict_fn(model):
    if hasattr(model, "predict"):
        return model.predict
    if callable(model):
        return model
    raise TypeError("model must provide predict(X) or be callable")


def _evaluate(f, rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] <= _ROW_BLOCK:
        return np.asarray(f(rows), dtype=np.float64)
    return np.concatenate([np.asarray(f(rows[s:s + _ROW_BLOCK]), dtype=np.float64)
                           for s in range(0, rows.shape[0], _ROW_BLOCK)])


# ---------------------------------------------------------------- PDP / ICE

@dataclass(frozen=True)
class PartialDependenceCurve:
    feature: int
    grid: np.ndarray
    pd: np.ndarray
    response: str = RESPONSE


@dataclass(frozen=True)
class IceBundle:
    feature: int
    grid: np.ndarray
    lines: np.ndarray  # N x G

    def pdp(self) -> PartialDependenceCurve:
        return PartialDependenceCurve(self.feature, self.grid, self.lines.mean(axis=0))


def feature_grid(X, feature: int, grid_size: int = GRID_SIZE) -> np.ndarray:
    X = as_array(X)
    if not 0 <= feature < X.shape[1]:
        raise IndexError(f"feature {feature} out of range for {X.shape[1]} features")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    lo, hi = float(X[:, feature].min()), float(X[:, feature].max())
    if not hi > lo:
        raise ValueError(f"feature {feature} is constant; no grid to evaluate")
    return np.linspace(lo, hi, grid_size)


def _forced(X, feature, v):
    Xv = X.copy()
    Xv[:, feature] = v
    return Xv


def pdp(model, X, feature: int, grid_size: int = GRID_SIZE) -> PartialDependenceCurve:
    """Mean response over all samples with ``feature`` forced to each grid value."""
    X = as_array(X)
    f = response_fn(model)
    grid = feature_grid(X, feature, grid_size)
    pd = np.array([_evaluate(f, _forced(X, feature, v)).mean() for v in grid])
    return PartialDependenceCurve(feature, grid, pd)


def ice(model, X, feature: int, grid_size: int = GRID_SIZE) -> IceBundle:
    """Per-sample response lines on the same grid as :func:`pdp`."""
    X = as_array(X)
    f = response_fn(model)
    grid = feature_grid(X, feature, grid_size)
    lines = np.column_stack([_evaluate(f, _forced(X, feature, v)) for v in grid])
    return IceBundle(feature, grid, lines)


# --------------------------------------------------------------------- QPDP

@dataclass(frozen=True)
class Nppd:
    """Partial dependence as a unit-mass distribution over the grid mapped to [0, 1]."""

    u: np.ndarray
    mass: np.ndarray


def normalize_pd(curve: PartialDependenceCurve | np.ndarray, grid=None) -> Nppd:
    if isinstance(curve, PartialDependenceCurve):
        grid, pd = curve.grid, curve.pd
    else:
        pd = np.asarray(curve, dtype=np.float64)
        grid = np.arange(pd.size, dtype=np.float64) if grid is None else np.asarray(grid, dtype=np.float64)
    if pd.size < 2 or grid.shape != pd.shape:
        raise ValueError("need a curve of at least 2 points on a matching grid")
    if (pd < 0).any():
        raise DegenerateCurveError("partial dependence has negative values")
    total = float(pd.sum())
    if not total > 0:
        raise DegenerateCurveError("partial dependence is identically zero")
    u = (grid - grid[0]) / (grid[-1] - grid[0])
    return Nppd(u, pd / total)


@dataclass(frozen=True)
class StepPdf:
    direction: str  # "rising" or "falling"
    truncation: float
    mass: np.ndarray


def step_pdf(direction: str, truncation: float, u) -> StepPdf:
    """Truncated uniform on the grid ``u``: rising keeps ``u >= a``, falling keeps ``u < b``."""
    u = np.asarray(u, dtype=np.float64)
    if direction == "rising":
        support = u >= truncation
    elif direction == "falling":
        support = u < truncation
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if not support.any():
        raise ValueError(f"{direction} step at {truncation} has no grid point in its support")
    mass = support / float(support.sum())
    return StepPdf(direction, float(truncation), mass)


def kl_divergence(f, q, eps: float = EPSILON) -> float:
    """``sum f log((f + eps) / (q + eps))``; zero-mass points of ``f`` contribute 0."""
    f = np.asarray(f, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = f > 0
    return float(np.sum(f[nz] * np.log((f[nz] + eps) / (q[nz] + eps))))


def squared_error(f, q) -> float:
    f = np.asarray(f, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum((f - q) ** 2))


def truncation_candidates(u) -> np.ndarray:
    """Midpoints between adjacent grid points; each splits the grid in two."""
    u = np.asarray(u, dtype=np.float64)
    return 0.5 * (u[:-1] + u[1:])


@dataclass(frozen=True)
class StepFit:
    kl: float
    kl_direction: str
    kl_truncation: float
    mse: float
    mse_direction: str
    mse_truncation: float
    nppd: Nppd = field(repr=False)


def fit_step(nppd: Nppd, eps: float = EPSILON) -> StepFit:
    """Best rising/falling step by KL and by squared error over all candidate truncations.

    Ties keep rising before falling, then the smaller truncation.
    """
    best_kl = (D_INIT, "", float("nan"))
    best_se = (D_INIT, "", float("nan"))
    for direction in ("rising", "falling"):
        for a in truncation_candidates(nppd.u):
            f = step_pdf(direction, a, nppd.u).mass
            kl = kl_divergence(f, nppd.mass, eps)
            se = squared_error(f, nppd.mass)
            if kl < best_kl[0]:
                best_kl = (kl, direction, float(a))
            if se < best_se[0]:
                best_se = (se, direction, float(a))
    return StepFit(best_kl[0], best_kl[1], best_kl[2], best_se[0], best_se[1], best_se[2], nppd)


@dataclass(frozen=True)
class QpdpScores:
    feature_names: list[str]
    fits: list[StepFit]
    curves: list[PartialDependenceCurve] = field(repr=False)
    epsilon: float = EPSILON
    orientation: str = "sum f log((f+eps)/(nppd+eps)), non-negative"

    @property
    def kl(self) -> np.ndarray:
        return np.array([f.kl for f in self.fits])

    @property
    def mse(self) -> np.ndarray:
        return np.array([f.mse for f in self.fits])


def qpdp(model, X, feature_names: Sequence[str] | None = None, grid_size: int = GRID_SIZE,
         epsilon: float = EPSILON) -> QpdpScores:
    """Per feature: PDP, normalization, and best step fit by KL and by squared error.
    Lower scores mean stronger dependence."""
    X = as_array(X)
    names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    curves, fits = [], []
    for j in range(X.shape[1]):
        c = pdp(model, X, j, grid_size)
        curves.append(c)
        fits.append(fit_step(normalize_pd(c), epsilon))
    return QpdpScores(names, fits, curves, epsilon)


# ------------------------------------------------------------------ Shapley

def shapley_weights(p: int) -> np.ndarray:
    """Weight of a coalition of size s not containing the feature, s = 0..p-1."""
    return np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])


def _masks(p):
    codes = np.arange(1 << p)
    return ((codes[:, None] >> np.arange(p)) & 1).astype(bool)


def _values_from_coalitions(V: np.ndarray, p: int) -> np.ndarray:
    """Shapley values from coalition values ``V`` of shape (m, 2^p), bit j = feature j."""
    w = shapley_weights(p)
    codes = np.arange(1 << p)
    size = np.array([bin(c).count("1") for c in codes])
    out = np.zeros((V.shape[0], p))
    for i in range(p):
        without = codes[(codes >> i) & 1 == 0]
        out[:, i] = (V[:, without | (1 << i)] - V[:, without]) @ w[size[without]]
    return out


def coalition_values(model, background, X) -> np.ndarray:
    """``v[n, S]`` = mean over background rows of f with features in S taken from ``X[n]``."""
    f = response_fn(model)
    B = as_array(background)
    X = as_array(X)
    if B.shape[0] == 0:
        raise ValueError("background is empty")
    p = X.shape[1]
    if B.shape[1] != p:
        raise ValueError("background and samples have different feature counts")
    masks = _masks(p)
    n_sub, nb = masks.shape[0], B.shape[0]
    chunk = max(1, _ROW_BLOCK // (n_sub * nb))
    out = np.empty((X.shape[0], n_sub))
    for s in range(0, X.shape[0], chunk):
        xs = X[s:s + chunk]
        # rows ordered (sample, subset, background)
        rows = np.where(masks[None, :, None, :], xs[:, None, None, :], B[None, None, :, :])
        vals = _evaluate(f, rows.reshape(-1, p))
        out[s:s + chunk] = vals.reshape(xs.shape[0], n_sub, nb).mean(axis=2)
    return out


@dataclass(frozen=True)
class ShapleyAttribution:
    values: np.ndarray  # m x p
    baseline: np.ndarray  # value of the empty coalition per sample
    prediction: np.ndarray  # value of the full coalition per sample
    mode: str
    background: str


def shapley(model, background, X) -> ShapleyAttribution:
    """Exact interventional Shapley values of one model by full subset enumeration."""
    X = as_array(X)
    p = X.shape[1]
    if p > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {p}")
    V = coalition_values(model, background, X)
    return ShapleyAttribution(_values_from_coalitions(V, p), V[:, 0], V[:, -1], "single-model",
                              f"{as_array(background).shape[0]} rows")


def shapley_retrain(fit_fn: Callable, X_train, y_train, X, positive_label=None) -> ShapleyAttribution:
    """Shapley values where each coalition S gets a model trained on S alone.

    ``fit_fn(X_sub, y)`` must return a model; the empty coalition predicts the
    training share of the positive class.
    """
    Xt = as_array(X_train)
    X = as_array(X)
    y = np.asarray(y_train)
    p = X.shape[1]
    if p > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {p}")
    positive = np.unique(y)[1] if positive_label is None else positive_label
    masks = _masks(p)
    V = np.empty((X.shape[0], masks.shape[0]))
    V[:, 0] = float(np.mean(y == positive))
    for c in range(1, masks.shape[0]):
        cols = np.flatnonzero(masks[c])
        V[:, c] = response_fn(fit_fn(Xt[:, cols], y))(X[:, cols])
    return ShapleyAttribution(_values_from_coalitions(V, p), V[:, 0], V[:, -1], "retrain",
                              "one model per feature subset")


@dataclass(frozen=True)
class MeanAbsShap:
    values: np.ndarray
    attribution: ShapleyAttribution = field(repr=False)
    sample_index: np.ndarray = field(repr=False)


def sample_rows(n: int, k: int, rng) -> np.ndarray:
    return np.arange(n) if n <= k else np.sort(rng.choice(n, size=k, replace=False))


def mean_abs_shap(model, X_test, X_train, n_samples: int = 1000, n_background: int = 200,
                  seed: int = 0) -> MeanAbsShap:
    """Mean |Shapley value| over up to ``n_samples`` test rows against a seeded
    background subsample of the training rows."""
    X_test = as_array(X_test)
    X_train = as_array(X_train)
    if X_test.shape[0] == 0:
        raise ValueError("test set is empty")
    rng = np.random.default_rng(seed)
    bg = X_train[sample_rows(X_train.shape[0], n_background, rng)]
    idx = sample_rows(X_test.shape[0], n_samples, rng)
    att = shapley(model, bg, X_test[idx])
    return MeanAbsShap(np.abs(att.values).mean(axis=0), att, idx)


# ---------------------------------------------------------------------- PFI

@dataclass(frozen=True)
class PfiResult:
    mean: np.ndarray
    std: np.ndarray
    drops: np.ndarray  # p x repeats
    baseline: float


def pfi(model, X_test, y_test, repeats: int = 30, seed: int = 0) -> PfiResult:
    """Accuracy drop when one test column is shuffled, averaged over ``repeats``.

    Each (feature, repeat) draws its permutation from its own generator
    seeded by ``[seed, feature, repeat]``.
    """
    X = as_array(X_test)
    y = np.asarray(y_test)
    if y.size == 0:
        raise ValueError("test set is empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    predict = _predict_fn(model)
    base = float(np.mean(predict(X) == y))
    drops = np.empty((X.shape[1], repeats))
    for j in range(X.shape[1]):
        for r in range(repeats):
            perm = np.random.default_rng([seed, j, r]).permutation(y.size)
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            drops[j, r] = base - float(np.mean(predict(Xp) == y))
    return PfiResult(drops.mean(axis=1), drops.std(axis=1), drops, base)


# --------------------------------------------------------------- consensus

LOWER_IS_BETTER = {"qpdp_kl": True, "qpdp_mse": True, "shap": False, "pfi": False}


def ordinal_ranks(values, lower_is_better: bool) -> np.ndarray:
    """Ranks 1..p, 1 = most important; equal scores keep feature order."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v if lower_is_better else -v, kind="stable")
    ranks = np.empty(v.size, dtype=np.intp)
    ranks[order] = np.arange(1, v.size + 1)
    return ranks


@dataclass(frozen=True)
class ImportanceTable:
    feature_names: list[str]
    columns: list[tuple[str, str]]  # (method, model)
    values: np.ndarray  # p x c
    ranks: np.ndarray  # p x c
    mean_rank: np.ndarray
    order: np.ndarray  # feature indices sorted by mean rank
    ties: list[list[str]]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "mean_rank", *(f"rank_{m}_{a}" for m, a in self.columns)])
            for j in self.order:
                w.writerow([self.feature_names[j], f"{self.mean_rank[j]:.6f}", *self.ranks[j].tolist()])


def importance_consensus(columns: Mapping[tuple[str, str], Sequence[float]],
                         feature_names: Sequence[str]) -> ImportanceTable:
    """Rank features within each (method, model) column and average the ranks."""
    names = list(feature_names)
    keys = list(columns)
    if not keys:
        raise ValueError("no importance columns")
    for k in keys:
        if k[0] not in LOWER_IS_BETTER:
            raise ValueError(f"unknown importance method {k[0]!r}")
        if len(columns[k]) != len(names):
            raise ValueError(f"column {k} covers {len(columns[k])} features, expected {len(names)}")
    values = np.column_stack([np.asarray(columns[k], dtype=np.float64) for k in keys])
    ranks = np.column_stack([ordinal_ranks(values[:, c], LOWER_IS_BETTER[k[0]]) for c, k in enumerate(keys)])
    mean_rank = ranks.mean(axis=1)
    order = np.argsort(mean_rank, kind="stable")
    ties = []
    for m in np.unique(mean_rank):
        group = np.flatnonzero(mean_rank == m)
        if group.size > 1:
            ties.append([names[j] for j in group])
    return ImportanceTable(names, keys, values, ranks, mean_rank, order, ties)
