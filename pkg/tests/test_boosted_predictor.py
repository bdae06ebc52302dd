import numpy as np
import pytest
from scipy.special import expit

from interclust.boosted_predictor import (BoostedModel, RegressionTree, accuracy, binomial_deviance, fit,
                                          grow_tree, metrics_to_csv, multinomial_deviance, train_test_split)
from interclust.synthetic import SyntheticSpec, generate_synthetic


def blobs(seed, n=100, gap=4.0, p=3):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 1, (n, p)), rng.normal(gap, 1, (n, p))])
    return X, np.repeat([1, 2], n)


# -- split -----------------------------------------------------------------------

def test_split_sizes_and_disjoint():
    sp = train_test_split(np.array([1] * 5 + [2] * 5), 0.7, seed=0)
    assert sp.train.size == 7 and sp.test.size == 3
    assert sorted(np.concatenate([sp.train, sp.test]).tolist()) == list(range(10))


def test_split_is_stratified():
    y = np.array([1] * 8 + [2] * 2)
    sp = train_test_split(y, 0.5, seed=3)
    assert np.bincount(y[sp.train])[1:].tolist() == [4, 1]
    assert np.bincount(y[sp.test])[1:].tolist() == [4, 1]


def test_split_deterministic_and_seed_sensitive():
    y = np.repeat([1, 2], 50)
    a, b = train_test_split(y, seed=4), train_test_split(y, seed=4)
    assert np.array_equal(a.train, b.train)
    assert not np.array_equal(a.train, train_test_split(y, seed=5).train)


@pytest.mark.parametrize("n1,n2", [(2, 9), (13, 7), (100, 101)])
def test_split_ratio_within_one_sample(n1, n2):
    y = np.array([1] * n1 + [2] * n2)
    sp = train_test_split(y, 0.7)
    assert abs(sp.train.size - 0.7 * y.size) <= 1


def test_split_errors():
    with pytest.raises(ValueError):
        train_test_split(np.array([1, 1, 1, 2]))
    with pytest.raises(ValueError):
        train_test_split(np.array([1, 1]))
    with pytest.raises(ValueError):
        train_test_split(np.array([1, 1, 2, 2]), 1.0)


# -- fitting -----------------------------------------------------------------------

def test_separable_one_stump():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    m = fit(X, [1, 1, 2, 2], max_depth=1, n_trees=1)
    assert accuracy(m, X, [1, 1, 2, 2]) == 1.0
    assert m.trees[0].threshold[0] == 1.5


def test_balanced_prior_gives_zero_init():
    m = fit(np.arange(4.0)[:, None], [1, 2, 1, 2], n_trees=1)
    assert m.init[0] == 0.0


def test_first_round_newton_leaves_by_hand():
    # F0 = log(1/3); p = 1/4 everywhere; the pure leaves get sum(r)/sum(p(1-p))
    X = np.arange(4.0)[:, None]
    m = fit(X, [1, 1, 1, 2], max_depth=1, n_trees=1)
    assert m.init[0] == pytest.approx(np.log(1 / 3))
    leaves = sorted(m.trees[0].value[m.trees[0].feature < 0].tolist())
    assert leaves[0] == pytest.approx((3 * -0.25) / (3 * 0.1875))
    assert leaves[1] == pytest.approx(0.75 / 0.1875)


def test_stump_probabilities_by_hand():
    stump = RegressionTree(np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]),
                           np.array([2, -1, -1]), np.array([0.0, 2.0, -2.0]))
    m = BoostedModel(np.array([1, 2]), np.array([0.0]), [stump], np.array([0]), 1.0, 1, "binomial", ["x"])
    p = m.positive_proba(np.array([[0.0], [1.0]]))
    assert p == pytest.approx([expit(2.0), expit(-2.0)], abs=1e-15)
    assert np.round(p, 4).tolist() == [0.8808, 0.1192]


def test_zero_trees_half_probability():
    m = BoostedModel(np.array([1, 2]), np.array([0.0]), [], np.zeros(0, dtype=np.intp), 1.0, 1, "binomial", ["x"])
    assert m.predict_proba(np.zeros((3, 1))).tolist() == [[0.5, 0.5]] * 3


def test_deviance_non_increasing_and_tree_count():
    X, y = blobs(0, gap=1.0)
    m = fit(X, y, n_trees=25, max_depth=3)
    assert len(m.trees) == 25 and len(m.train_deviance) == 26
    assert np.all(np.diff(m.train_deviance) <= 0)
    assert m.train_deviance[-1] == pytest.approx(binomial_deviance((y == 2).astype(float),
                                                                   m.decision_function(X)[:, 0]), rel=1e-9)


def test_depth_bound_and_midpoint_thresholds():
    X, y = blobs(1, gap=0.5)
    X = np.round(X, 1)
    m = fit(X, y, n_trees=5, max_depth=4)
    for t in m.trees:
        assert t.depth() <= 4
        stack = [(0, np.arange(len(X)))]
        while stack:
            i, idx = stack.pop()
            f = t.feature[i]
            if f < 0:
                assert idx.size > 0  # every leaf is reached by training samples
                continue
            go = X[idx, f] <= t.threshold[i]
            assert t.threshold[i] == 0.5 * (X[idx[go], f].max() + X[idx[~go], f].min())
            stack += [(t.left[i], idx[go]), (t.right[i], idx[~go])]


def test_capacity_fits_consistent_training_set():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(600, 4))
    y = np.where(np.sin(3 * X[:, 0]) + X[:, 1] * X[:, 2] > 0, 2, 1)
    m = fit(X, y)
    assert accuracy(m, X, y) >= 0.99


def test_synthetic_two_cluster_test_accuracy():
    fm, y = generate_synthetic(SyntheticSpec(n_per_cluster=(300, 300), seed=3))
    X = fm.values
    sp = train_test_split(y, seed=0)
    m = fit(X[sp.train], y[sp.train], n_trees=100, max_depth=10)
    assert accuracy(m, X[sp.test], y[sp.test]) >= 0.99


def test_probabilities_valid():
    X, y = blobs(4)
    m = fit(X, y, n_trees=20)
    P = m.predict_proba(np.random.default_rng(0).normal(0, 10, (200, 3)))
    assert np.all((P > 0) & (P < 1))
    assert np.allclose(P.sum(1), 1.0, atol=1e-12)
    assert np.array_equal(P[:, 0], 1.0 - P[:, 1])


def test_multinomial_three_classes():
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(c * 4, 1, (60, 2)) for c in range(3)])
    y = np.repeat([1, 2, 3], 60)
    m = fit(X, y, n_trees=10, max_depth=3)
    assert m.loss == "multinomial" and len(m.trees) == 30
    assert m.tree_out.tolist() == [0, 1, 2] * 10
    assert np.all(np.diff(m.train_deviance) <= 0)
    Y = (y[:, None] == np.array([1, 2, 3])).astype(float)
    assert m.train_deviance[-1] == pytest.approx(multinomial_deviance(Y, m.decision_function(X)), rel=1e-9)
    assert accuracy(m, X, y) >= 0.95
    assert np.allclose(m.predict_proba(X).sum(1), 1.0, atol=1e-12)


def test_serialization_round_trip_and_determinism(tmp_path):
    X, y = blobs(6, gap=1.5)
    a = fit(X, y, n_trees=15, seed=9)
    b = fit(X, y, n_trees=15, seed=9)
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    back = BoostedModel.load(tmp_path / "a.json")
    assert np.array_equal(back.predict_proba(X), a.predict_proba(X))


def test_fit_and_predict_errors():
    with pytest.raises(ValueError):
        fit(np.zeros((3, 1)), [1, 1, 1])
    with pytest.raises(ValueError):
        fit(np.zeros((3, 1)), [1, 2])
    m = fit(np.arange(4.0)[:, None], [1, 1, 2, 2], n_trees=2)
    with pytest.raises(ValueError, match="features"):
        m.predict(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        accuracy(m, np.zeros((0, 1)), [])
    with pytest.raises(ValueError):
        BoostedModel.from_dict({"format": "other"})


def test_grow_tree_members_partition_samples():
    X, y = blobs(7, n=30)
    tree, members = grow_tree(X, (y == 2) - 0.5, max_depth=3)
    leaf = tree.leaf_index(X)
    for i, idx in enumerate(members):
        if idx is not None:
            assert np.array_equal(np.flatnonzero(leaf == i), idx)


def test_accuracy_and_metrics_csv(tmp_path):
    X = np.arange(20.0)[:, None]
    y = np.array([1] * 10 + [2] * 10)
    m = fit(X, y, max_depth=1, n_trees=1)
    flipped = y.copy()
    flipped[0] = 2
    assert accuracy(m, X, flipped) == 0.95
    metrics_to_csv([{"model": "kmeans", "accuracy": 0.95, "n_train": 14, "n_test": 6, "seed": 1}], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == "model,accuracy,n_train,n_test,seed\nkmeans,0.950000,14,6,1\n"
