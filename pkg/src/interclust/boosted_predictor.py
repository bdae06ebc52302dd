"""Gradient-boosted regression trees for cluster-label classification.

Two classes use the binomial deviance with one tree per round; more classes
use the multinomial deviance with one tree per class per round. Leaves take a
single Newton step. Class ``classes[1]`` is the positive class of the
binomial model, so with cluster labels ``{1, 2}`` the model's probability is
the probability of cluster 2.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp, softmax

from . import _kernels
from .cluster_engine import as_array

logger = logging.getLogger(__name__)

MIN_GAIN = 1e-12
MIN_HESSIAN = 1e-150
PROB_CLIP = 1e-15


@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    test: np.ndarray
    ratio: float
    seed: int


def train_test_split(y, ratio: float = 0.7, seed: int = 0) -> SplitSpec:
    """Stratified split. Per-class train counts come from largest-remainder
    rounding of ``ratio * n_class`` so the total is ``round(ratio * N)``, with
    at least one sample of every class on each side."""
    y = np.asarray(y)
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ValueError("need at least 2 classes to split")
    if counts.min() < 2:
        raise ValueError(f"class {classes[np.argmin(counts)]!r} has fewer than 2 members")
    exact = ratio * counts
    take = np.floor(exact).astype(np.intp)
    short = int(round(ratio * y.size)) - int(take.sum())
    if short > 0:
        order = np.argsort(-(exact - take), kind="stable")
        take[order[:short]] += 1
    take = np.clip(take, 1, counts - 1)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c, t in zip(classes, take):
        members = rng.permutation(np.flatnonzero(y == c))
        train.append(members[:t])
        test.append(members[t:])
    return SplitSpec(np.sort(np.concatenate(train)), np.sort(np.concatenate(test)), ratio, seed)


@dataclass
class RegressionTree:
    """Flat binary tree; ``feature == -1`` marks a leaf. Node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def depth(self) -> int:
        def rec(i):
            return 0 if self.feature[i] < 0 else 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def leaf_index(self, X) -> np.ndarray:
        X = as_array(X)
        node = np.zeros(X.shape[0], dtype=np.intp)
        todo = np.flatnonzero(self.feature[node] >= 0)
        while todo.size:
            nd = node[todo]
            node[todo] = np.where(X[todo, self.feature[nd]] <= self.threshold[nd], self.left[nd], self.right[nd])
            todo = todo[self.feature[node[todo]] >= 0]
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.leaf_index(X)]

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"value": float(self.value[i])}
        return {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                "left": self.to_dict(int(self.left[i])), "right": self.to_dict(int(self.right[i]))}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        feat, thr, lft, rgt, val = [], [], [], [], []

        def rec(node):
            i = len(feat)
            feat.append(-1)
            thr.append(0.0)
            lft.append(-1)
            rgt.append(-1)
            val.append(0.0)
            if "value" in node:
                val[i] = float(node["value"])
            else:
                feat[i] = int(node["feature"])
                thr[i] = float(node["threshold"])
                lft[i] = rec(node["left"])
                rgt[i] = rec(node["right"])
            return i

        rec(d)
        return cls(np.array(feat, dtype=np.intp), np.array(thr), np.array(lft, dtype=np.intp),
                   np.array(rgt, dtype=np.intp), np.array(val))


def grow_tree(X, r, max_depth: int, min_gain: float = MIN_GAIN) -> tuple[RegressionTree, list[np.ndarray]]:
    """Variance-reduction tree on residuals ``r``; returns the tree and each
    leaf's sample indices (aligned with node ids, ``None`` for internal nodes).
    Leaf values are left at zero for the caller to fill."""
    X = np.asarray(X, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    feat, thr, lft, rgt = [], [], [], []
    members: list = []

    def rec(idx, depth):
        i = len(feat)
        feat.append(-1)
        thr.append(0.0)
        lft.append(-1)
        rgt.append(-1)
        members.append(idx)
        if depth >= max_depth or idx.size < 2:
            return i
        gain, f, t = _kernels.best_split(X, r, idx)
        if f < 0 or gain <= min_gain:
            return i
        go_left = X[idx, f] <= t
        feat[i], thr[i], members[i] = f, t, None
        lft[i] = rec(idx[go_left], depth + 1)
        rgt[i] = rec(idx[~go_left], depth + 1)
        return i

    rec(np.arange(X.shape[0], dtype=np.intp), 0)
    n = len(feat)
    tree = RegressionTree(np.array(feat, dtype=np.intp), np.array(thr), np.array(lft, dtype=np.intp),
                          np.array(rgt, dtype=np.intp), np.zeros(n))
    return tree, members


def _newton_leaves(tree, members, r, h, scale=1.0):
    for i, idx in enumerate(members):
        if idx is None:
            continue
        den = float(h[idx].sum())
        tree.value[i] = 0.0 if den < MIN_HESSIAN else scale * float(r[idx].sum()) / den


@dataclass
class BoostedModel:
    classes: np.ndarray
    init: np.ndarray  # one raw score per output column
    trees: list[RegressionTree]
    tree_out: np.ndarray  # output column fed by each tree
    learning_rate: float
    max_depth: int
    loss: str
    feature_names: list[str]
    seed: int = 0
    train_deviance: list[float] = field(default_factory=list)
    _flat: tuple | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_outputs(self) -> int:
        return self.init.size

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _flatten(self):
        if self._flat is None:
            offs, parts = 0, {k: [] for k in ("feature", "threshold", "left", "right", "value")}
            roots = []
            for t in self.trees:
                roots.append(offs)
                parts["feature"].append(t.feature)
                parts["threshold"].append(t.threshold)
                parts["left"].append(np.where(t.left >= 0, t.left + offs, -1))
                parts["right"].append(np.where(t.right >= 0, t.right + offs, -1))
                parts["value"].append(t.value)
                offs += t.n_nodes
            cat = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in parts.items()}
            self._flat = (cat["feature"].astype(np.intp), cat["threshold"], cat["left"].astype(np.intp),
                          cat["right"].astype(np.intp), cat["value"], np.array(roots, dtype=np.intp),
                          np.asarray(self.tree_out, dtype=np.intp))
        return self._flat

    def decision_function(self, X) -> np.ndarray:
        """Raw scores, shape ``(N, n_outputs)``."""
        X = as_array(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got {X.shape[1]}")
        raw = _kernels.predict_forest(*self._flatten(), X, self.n_outputs)
        return self.init + self.learning_rate * raw

    def predict_proba(self, X) -> np.ndarray:
        raw = self.decision_function(X)
        if self.loss == "binomial":
            p2 = np.clip(expit(raw[:, 0]), PROB_CLIP, 1 - PROB_CLIP)
            return np.column_stack([1.0 - p2, p2])
        return _clip_rows(softmax(raw, axis=1))

    def positive_proba(self, X) -> np.ndarray:
        """Probability of ``classes[1]`` (cluster 2 for labels ``{1, 2}``)."""
        return self.predict_proba(X)[:, 1]

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]

    def to_dict(self) -> dict:
        return {
            "format": "interclust-gbm/1",
            "loss": self.loss,
            "classes": self.classes.tolist(),
            "feature_names": list(self.feature_names),
            "learning_rate": float(self.learning_rate),
            "max_depth": int(self.max_depth),
            "seed": int(self.seed),
            "init": [float(v) for v in self.init],
            "train_deviance": [float(v) for v in self.train_deviance],
            "trees": [{"output": int(o), "root": t.to_dict()} for t, o in zip(self.trees, self.tree_out)],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        if d.get("format") != "interclust-gbm/1":
            raise ValueError("not a serialized boosted model")
        return cls(np.array(d["classes"]), np.array(d["init"], dtype=np.float64),
                   [RegressionTree.from_dict(t["root"]) for t in d["trees"]],
                   np.array([t["output"] for t in d["trees"]], dtype=np.intp),
                   float(d["learning_rate"]), int(d["max_depth"]), d["loss"], list(d["feature_names"]),
                   int(d.get("seed", 0)), list(d.get("train_deviance", [])))

    @classmethod
    def load(cls, path: str | Path) -> "BoostedModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _clip_rows(P):
    P = np.clip(P, PROB_CLIP, 1.0)
    return P / P.sum(axis=1, keepdims=True)


def binomial_deviance(y01, F) -> float:
    """Mean of ``-2 log-likelihood`` under ``p = sigmoid(F)``."""
    # log(1 + e^F) - y F, written stably
    return float(2.0 * np.mean(np.logaddexp(0.0, F) - y01 * F))


def multinomial_deviance(Y, F) -> float:
    return float(-2.0 * np.mean((Y * (F - logsumexp(F, axis=1, keepdims=True))).sum(axis=1)))


def fit(X, y, learning_rate: float = 1.0, max_depth: int = 10, n_trees: int = 100, seed: int = 0,
        feature_names=None, max_halvings: int = 30) -> BoostedModel:
    """Boost ``n_trees`` rounds of depth-bounded regression trees.

    A round whose Newton leaves would raise the training deviance has its
    leaf values halved until the deviance no longer rises. No randomness is
    used; ``seed`` is recorded for provenance.
    """
    X = as_array(X)
    y = np.asarray(y)
    if X.shape[0] != y.size:
        raise ValueError("X and y lengths differ")
    if learning_rate <= 0 or n_trees < 1 or max_depth < 1:
        raise ValueError("need learning_rate > 0, n_trees >= 1 and max_depth >= 1")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("training labels contain a single class")
    names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    if classes.size == 2:
        return _fit_binomial(X, y == classes[1], classes, learning_rate, max_depth, n_trees, seed, names,
                             max_halvings)
    return _fit_multinomial(X, y, classes, learning_rate, max_depth, n_trees, seed, names, max_halvings)


def _fit_binomial(X, pos, classes, lr, max_depth, n_trees, seed, names, max_halvings):
    y01 = pos.astype(np.float64)
    prior = y01.mean()
    init = np.array([np.log(prior / (1.0 - prior))])
    F = np.full(y01.size, init[0])
    dev = [binomial_deviance(y01, F)]
    trees = []
    for _ in range(n_trees):
        p = expit(F)
        r = y01 - p
        tree, members = grow_tree(X, r, max_depth)
        _newton_leaves(tree, members, r, p * (1.0 - p))
        step = tree.predict(X)
        new = binomial_deviance(y01, F + lr * step)
        halvings = 0
        while new > dev[-1] and halvings < max_halvings:
            tree.value *= 0.5
            step *= 0.5
            new = binomial_deviance(y01, F + lr * step)
            halvings += 1
        if new > dev[-1]:
            tree.value[:] = 0.0
            step[:] = 0.0
            new = dev[-1]
        if halvings:
            logger.debug("round %d: leaf values halved %d times", len(trees) + 1, halvings)
        F = F + lr * step
        dev.append(new)
        trees.append(tree)
    return BoostedModel(classes, init, trees, np.zeros(len(trees), dtype=np.intp), lr, max_depth,
                        "binomial", names, seed, dev)


def _fit_multinomial(X, y, classes, lr, max_depth, n_trees, seed, names, max_halvings):
    K = classes.size
    Y = (y[:, None] == classes[None, :]).astype(np.float64)
    prior = Y.mean(axis=0)
    init = np.log(prior) - np.log(prior).mean()
    F = np.tile(init, (y.size, 1))
    dev = [multinomial_deviance(Y, F)]
    trees, outs = [], []
    scale = (K - 1.0) / K
    for _ in range(n_trees):
        P = softmax(F, axis=1)
        step = np.zeros_like(F)
        round_trees = []
        for k in range(K):
            r = Y[:, k] - P[:, k]
            tree, members = grow_tree(X, r, max_depth)
            _newton_leaves(tree, members, r, P[:, k] * (1.0 - P[:, k]), scale)
            step[:, k] = tree.predict(X)
            round_trees.append(tree)
        new = multinomial_deviance(Y, F + lr * step)
        halvings = 0
        while new > dev[-1] and halvings < max_halvings:
            for t in round_trees:
                t.value *= 0.5
            step *= 0.5
            new = multinomial_deviance(Y, F + lr * step)
            halvings += 1
        if new > dev[-1]:
            for t in round_trees:
                t.value[:] = 0.0
            step[:] = 0.0
            new = dev[-1]
        F = F + lr * step
        dev.append(new)
        trees.extend(round_trees)
        outs.extend(range(K))
    return BoostedModel(classes, init, trees, np.array(outs, dtype=np.intp), lr, max_depth,
                        "multinomial", names, seed, dev)


def accuracy(model: BoostedModel, X, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty test set")
    return float(np.mean(model.predict(X) == y))


def metrics_to_csv(rows: list[dict], path: str | Path) -> None:
    """``rows`` of ``{model, accuracy, n_train, n_test, seed}``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "accuracy", "n_train", "n_test", "seed"])
        for r in rows:
            w.writerow([r["model"], f"{r['accuracy']:.6f}", r["n_train"], r["n_test"], r["seed"]])
