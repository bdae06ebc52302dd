import numpy as np
import pytest

import oracles
from interclust.model_select import (CH_CAP, bandwidth_grid, calinski_harabasz, kdist_knee, knee_index,
                                     kth_neighbor_distances, score, silhouette, sweep_bandwidth, sweep_k,
                                     sweep_min_samples)

FOUR = np.array([0.0, 0.1, 10.0, 10.1])[:, None]


def two_blobs(seed=0, n=40, gap=6.0):
    rng = np.random.default_rng(seed)
    return np.vstack([rng.normal(0, 0.5, (n, 2)), rng.normal(gap, 0.5, (n, 2))])


def test_silhouette_hand_example():
    s = silhouette(FOUR, [1, 1, 2, 2])
    # a = 0.1 for every point; b = 10.05 or 9.95
    expected = 0.5 * ((1 - 0.1 / 10.05) + (1 - 0.1 / 9.95))
    assert s == pytest.approx(expected, abs=1e-12)
    assert round(s, 3) == 0.990


def test_calinski_harabasz_hand_example():
    assert calinski_harabasz(FOUR, [1, 1, 2, 2]) == pytest.approx(20000.0, rel=1e-12)


@pytest.mark.parametrize("seed", range(25))
def test_indices_match_loop_references(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 31))
    X = rng.normal(size=(n, int(rng.integers(1, 5))))
    k = int(rng.integers(2, min(5, n - 1) + 1))
    labels = np.concatenate([np.arange(1, k + 1), rng.integers(0, k + 1, n - k)])
    rng.shuffle(labels)
    if np.unique(labels[labels > 0]).size < 2 or (labels > 0).sum() <= np.unique(labels[labels > 0]).size:
        pytest.skip("degenerate draw")
    assert silhouette(X, labels) == pytest.approx(oracles.silhouette_loops(X, labels), abs=1e-12)
    assert calinski_harabasz(X, labels) == pytest.approx(oracles.calinski_harabasz_loops(X, labels), rel=1e-12)


def test_singletons_score_zero():
    X = np.array([[0.0], [1.0], [5.0]])
    # point 2 is a singleton -> contributes 0
    assert silhouette(X, [1, 1, 2]) == pytest.approx(oracles.silhouette_loops(X, [1, 1, 2]), abs=1e-15)


def test_ch_zero_within_dispersion_is_capped():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    assert calinski_harabasz(X, [1, 1, 2, 2]) == CH_CAP


def test_score_undefined_outside_two_to_n_minus_one():
    assert score(FOUR, [1, 1, 1, 1]).silhouette is None
    assert score(FOUR, [1, 2, 3, 4]).calinski_harabasz is None
    assert score(FOUR, [0, 0, 1, 2]).silhouette is None  # k == clustered n


def test_sweep_k_picks_two_blobs():
    X = two_blobs()
    for algo in ("kmeans", "agglomerative", "birch"):
        res = sweep_k(X, algo, 2, 6, seed=0)
        assert res.chosen == 2, algo
        assert [r[0] for r in res.rows] == [2, 3, 4, 5, 6]


def test_sweep_k_flags_index_disagreement():
    # three points, one far away: silhouette and CH disagree on some data; build one case by search
    rng = np.random.default_rng(0)
    for _ in range(200):
        X = rng.normal(size=(12, 2))
        res = sweep_k(X, "agglomerative", 2, 5)
        if res.disagreement:
            assert res.extra["ch_choice"] != res.chosen
            return
    pytest.skip("no disagreement found")


def test_sweep_k_rejects_bad_range():
    with pytest.raises(ValueError):
        sweep_k(FOUR, "kmeans", 2, 4)
    with pytest.raises(ValueError):
        sweep_k(FOUR, "dbscan", 2, 3)


def test_kth_neighbor_distances():
    X = np.array([[0.0], [1.0], [3.0], [7.0]])
    assert kth_neighbor_distances(X, 1).tolist() == [1.0, 1.0, 2.0, 4.0]
    assert kth_neighbor_distances(X, 2).tolist() == [3.0, 2.0, 3.0, 6.0]
    with pytest.raises(ValueError):
        kth_neighbor_distances(X, 4)


@pytest.mark.parametrize("kink", [120, 300, 450])
def test_knee_of_two_segment_curve(kink):
    x = np.arange(600, dtype=float)
    y = np.where(x < kink, 0.01 * x, 0.01 * kink + 0.5 * (x - kink))
    idx, w = knee_index(y)
    assert w % 2 == 1
    assert abs(idx - kink) <= 1


def test_knee_short_curve_unsmoothed():
    idx, w = knee_index([0.0, 0.0, 0.0, 1.0, 2.0])
    assert (idx, w) == (2, 1)


def test_kdist_knee_defaults():
    X = two_blobs(1)
    kc = kdist_knee(X)
    assert kc.k == 4
    assert np.all(np.diff(kc.distances) >= 0)
    assert kc.eps == kc.distances[kc.knee_index]


def test_sweep_min_samples_groups_by_count():
    X = two_blobs(2)
    res = sweep_min_samples(X, eps=1.5, min_pts_range=range(1, 30))
    assert res.chosen_k == 2
    two = next(g for g in res.groups if g["k"] == 2)
    assert res.chosen == min(two["params"])
    assert abs(np.mean([r[1].silhouette for r in res.rows if r[1].k == 2]) - two["silhouette"]) < 1e-12


def test_sweep_min_samples_degenerate():
    res = sweep_min_samples(FOUR, eps=100.0, min_pts_range=range(1, 3))
    assert res.chosen is None and res.rule.startswith("degenerate")


def test_bandwidth_grid_and_sweep():
    g = bandwidth_grid()
    assert g.size == 21 and g[0] == 0.1 and g[-1] == 0.3
    X = two_blobs(3)
    res = sweep_bandwidth(X, bandwidth_grid(1.0, 2.0, 0.25))
    assert res.chosen_k == 2
    two = next(gr for gr in res.groups if gr["k"] == 2)
    assert res.chosen == max(two["params"])


def test_sweep_csv(tmp_path):
    res = sweep_k(two_blobs(), "agglomerative", 2, 3)
    res.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "param,k,silhouette,calinski_harabasz"
    assert lines[1].startswith("2,2,")
    assert len(lines) == 3


def test_birch_sweep_skips_k_beyond_subclusters():
    X = np.repeat(np.array([[0.0], [5.0], [10.0]]), 4, axis=0)
    res = sweep_k(X, "birch", 2, 5, birch_threshold=0.5)
    assert [r[1].silhouette is None for r in res.rows] == [False, False, True, True]
    assert res.chosen in (2, 3)
    res = sweep_k(np.zeros((6, 1)), "birch", 2, 3, birch_threshold=0.5)
    assert res.chosen is None and res.rule.startswith("degenerate")


def test_knee_never_lands_on_zero_distance():
    X = np.concatenate([np.zeros(50), [5.0, 6.0, 7.0, 8.0]])[:, None]
    dist = np.sort(kth_neighbor_distances(X, 2))
    raw, _ = knee_index(dist, 3)
    assert dist[raw] == 0  # the unadjusted knee sits on the duplicates
    kc = kdist_knee(X, k=2, window=3)
    assert kc.knee_index == 50 and kc.eps == 1.0
    with pytest.raises(ValueError):
        kdist_knee(np.zeros((10, 1)), k=2)


def test_silhouette_crossed_pairs_by_hand():
    # each point sits 10 from its partner and ~5 (mean) from the other pair
    s = silhouette(FOUR, [1, 2, 1, 2])
    expected = np.mean([(5.1 - 10) / 10, (5.0 - 10) / 10, (5.0 - 10) / 10, (5.1 - 10) / 10])
    assert s == pytest.approx(expected, abs=1e-12)
    assert s == pytest.approx(-0.495, abs=1e-12)
