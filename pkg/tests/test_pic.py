import numpy as np
import pytest

from deepcluster.featpipe import l2_normalize
from deepcluster.pic import (PicGraph, build_knn_graph, knn, maxima_per_cluster, pic_cluster,
                             pic_extract_clusters, pic_iterate)
from deepcluster.synthetic import make_gaussian_blobs


def test_identical_features_weight_one():
    g = build_knn_graph(np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0]]), 1, 0.2)
    assert g.neighbors[0, 0] == 1
    assert g.weights[0, 0] == 1.0


def test_weight_at_sigma_distance():
    g = build_knn_graph(np.array([[0.0], [0.2], [5.0]]), 1, 0.2)
    assert g.weights[0, 0] == pytest.approx(np.exp(-1))


def test_collinear_tie_to_lower_id():
    idx, _ = knn(np.array([[0.0], [1.0], [2.0]]), 1)
    assert idx[:, 0].tolist() == [1, 0, 1]


def test_knn_excludes_self(rng):
    idx, d = knn(rng.standard_normal((20, 3)), 4, block=7)
    assert not (idx == np.arange(20)[:, None]).any()
    assert (np.diff(d, axis=1) >= 0).all()


def test_knn_bounds():
    with pytest.raises(ValueError):
        knn(np.zeros((3, 2)), 3)


def _edgeless(n):
    return PicGraph(np.zeros((n, 1), dtype=np.int64), np.zeros((n, 1)), 0.2)


def test_edgeless_graph_keeps_v():
    v = pic_iterate(_edgeless(4), 0.5, 10)
    np.testing.assert_allclose(v, 0.25)
    assert pic_extract_clusters(_edgeless(4), v).tolist() == [0, 1, 2, 3]


def test_two_node_symmetric():
    g = PicGraph(np.array([[1], [0]]), np.array([[0.7], [0.7]]), 0.2)
    np.testing.assert_allclose(pic_iterate(g, 0.3, 20), [0.5, 0.5])


def test_two_pairs():
    g = PicGraph(np.array([[1], [0], [3], [2]]), np.ones((4, 1)), 0.2)
    a, maxima = pic_extract_clusters(g, np.array([0.1, 0.2, 0.3, 0.4]), return_maxima=True)
    assert a.tolist() == [0, 0, 1, 1]
    assert maxima.tolist() == [1, 3]
    assert maxima_per_cluster(a, maxima).tolist() == [1, 1]


def test_equal_scores_give_singletons(rng):
    g = build_knn_graph(rng.standard_normal((6, 2)), 2, 1.0)
    assert pic_extract_clusters(g, np.full(6, 1 / 6)).tolist() == list(range(6))


def test_iterate_stays_probability_vector(rng):
    x, _ = make_gaussian_blobs(50, 3, dim=4, spread=0.05, seed=1)
    g = build_knn_graph(l2_normalize(x)[0], 5, 0.2)
    seen = []
    pic_iterate(g, 1e-3, 100, 0.0, callback=seen.append)
    assert len(seen) == 100
    for v in seen:
        assert (v >= 0).all()
        assert abs(v.sum() - 1) < 1e-12


def test_iterate_matches_dense_recurrence(rng):
    x = rng.standard_normal((30, 3))
    g = build_knn_graph(x, 4, 1.5)
    dense = np.zeros((30, 30))
    for i in range(30):
        for j, w in zip(g.neighbors[i], g.weights[i]):
            dense[i, j] = w
    v = np.full(30, 1 / 30)
    for _ in range(50):
        v = 0.01 * (dense + dense.T) @ v + 0.99 * v
        v /= np.abs(v).sum()
    np.testing.assert_allclose(pic_iterate(g, 0.01, 50, 0.0), v, rtol=1e-12)


def test_every_cluster_has_one_maximum():
    x, _ = make_gaussian_blobs(100, 2, dim=8, spread=0.02, seed=3)
    g = build_knn_graph(l2_normalize(x)[0], 5, 0.2)
    a, maxima = pic_extract_clusters(g, pic_iterate(g), return_maxima=True)
    assert (maxima_per_cluster(a, maxima) == 1).all()


def test_clusters_never_straddle_far_blobs():
    x, labels = make_gaussian_blobs(100, 2, dim=8, spread=0.02, seed=2)
    a = pic_cluster(l2_normalize(x)[0])
    for c in np.unique(a):
        assert len(np.unique(labels[a == c])) == 1
