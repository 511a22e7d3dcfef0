import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfl.graph import (SIMILARITY_METHODS, Graph, SimilarityConfig, build_relational_structure,
                       label_propagation, normalize_adjacency, similarity)

from conftest import graphs, path_graph, random_graph
from oracles import bfs_dist, oracle_similarity, oracle_structure


# ---------------------------------------------------------------------------

def test_graph_validation():
    with pytest.raises(ValueError):
        Graph(np.array([[0, 1], [0, 0]]), np.ones((2, 1)), [0, 0])
    with pytest.raises(ValueError):
        Graph(np.array([[1, 0], [0, 0]]), np.ones((2, 1)), [0, 0])
    with pytest.raises(ValueError):
        Graph(np.zeros((2, 2)), np.ones((3, 1)), [0, 0])


def test_normalize_single_node():
    g = Graph(np.zeros((1, 1)), np.ones((1, 2)), [0])
    np.testing.assert_array_equal(normalize_adjacency(g), [[1.0]])


def test_normalize_two_connected_nodes():
    np.testing.assert_allclose(normalize_adjacency(path_graph(2)), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_normalize_path_matches_direct_computation():
    g = path_graph(5)
    S = g.adjacency + np.eye(5)
    deg = [S[i].sum() for i in range(5)]
    expected = np.array([[S[i, j] / math.sqrt(deg[i] * deg[j]) for j in range(5)] for i in range(5)])
    np.testing.assert_allclose(normalize_adjacency(g), expected, rtol=0, atol=1e-15)


def test_isolated_node_keeps_only_self_loop():
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = 1
    P = normalize_adjacency(Graph(A, np.ones((3, 1)), [0, 0, 0]))
    assert np.count_nonzero(P[2]) == 1 and P[2, 2] == 1.0
    assert np.count_nonzero(P[:, 2]) == 1


@given(graphs(min_n=1, max_n=16))
def test_normalize_is_exactly_symmetric(g):
    P = normalize_adjacency(g)
    assert np.array_equal(P, P.T)


def test_path_common_neighbour_similarity():
    g = path_graph(3)
    cfg = SimilarityConfig(hop_k=1)
    assert similarity(g, 0, 2, cfg) == pytest.approx(0.7310585786300049, abs=1e-12)
    assert similarity(g, 0, 2, cfg) == pytest.approx(oracle_similarity(g, 0, 2, cfg), abs=1e-15)


def test_no_common_neighbours_gives_half():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = A[2, 3] = A[3, 2] = 1
    g = Graph(A, np.ones((4, 1)), [0] * 4)
    assert similarity(g, 0, 2, SimilarityConfig(hop_k=3)) == 0.5


def test_jaccard_identical_neighbourhoods():
    # star: leaves share the hub as their whole neighbourhood
    A = np.zeros((4, 4))
    A[0, 1:] = A[1:, 0] = 1
    g = Graph(A, np.ones((4, 1)), [0] * 4)
    assert similarity(g, 1, 3, SimilarityConfig(method="jaccard")) == 1.0


def test_self_similarity_is_an_error():
    with pytest.raises(ValueError):
        similarity(path_graph(3), 1, 1, SimilarityConfig())


def test_similarity_config_requires_mu0_below_mu():
    with pytest.raises(ValueError):
        SimilarityConfig(mu=0.5, mu0=0.5)
    with pytest.raises(ValueError):
        SimilarityConfig(hop_k=0)


@pytest.mark.parametrize("method", SIMILARITY_METHODS)
@settings(max_examples=25, deadline=None)
@given(g=graphs(min_n=3, max_n=12), hop=st.integers(1, 3))
def test_similarity_matches_oracle_and_is_symmetric(method, g, hop):
    if method == "pagerank" and np.any(g.degrees == 0):
        return  # the linear-solve oracle needs every node to have an edge
    cfg = SimilarityConfig(method=method, hop_k=hop)
    for u in range(g.n):
        for v in range(u + 1, g.n):
            s = similarity(g, u, v, cfg)
            assert s == similarity(g, v, u, cfg)
            assert s == pytest.approx(oracle_similarity(g, u, v, cfg), abs=1e-7 if method == "pagerank" else 1e-12)
            if method == "jaccard":
                assert 0.0 <= s <= 1.0
            else:
                assert 0.0 < s < 1.0


def test_pagerank_handles_isolated_nodes():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = 1
    g = Graph(A, np.ones((4, 1)), [0] * 4)
    Pi = g.personalized_pagerank()
    np.testing.assert_allclose(Pi.sum(axis=1), 1.0, atol=1e-7)
    assert similarity(g, 2, 3, SimilarityConfig(method="pagerank")) == 0.5


@settings(max_examples=30, deadline=None)
@given(g=graphs(min_n=3, max_n=12))
def test_common_neighbour_score_is_monotone_in_count(g):
    cfg = SimilarityConfig(hop_k=2)
    pairs = []
    for u in range(g.n):
        du = bfs_dist(g.adjacency, u)
        for v in range(u + 1, g.n):
            dv = bfs_dist(g.adjacency, v)
            count = sum(1 for w in range(g.n) if w not in (u, v) and du[w] <= 2 and dv[w] <= 2)
            pairs.append((count, similarity(g, u, v, cfg)))
    pairs.sort()
    scores = [s for _, s in pairs]
    assert scores == sorted(scores)


def test_structure_single_node():
    r = build_relational_structure(path_graph(4), [2], SimilarityConfig())
    np.testing.assert_array_equal(r.weights, [[1.0]])


def test_structure_empty_support_is_an_error():
    with pytest.raises(ValueError):
        build_relational_structure(path_graph(4), [], SimilarityConfig())


def test_structure_all_below_threshold_uses_floor():
    # no common neighbours anywhere: every score is sigmoid(0) = 0.5 < mu
    g = Graph(np.zeros((4, 4)), np.ones((4, 1)), [0] * 4)
    r = build_relational_structure(g, [0, 1, 2, 3], SimilarityConfig(mu=0.6, mu0=0.2))
    off = r.weights[~np.eye(4, dtype=bool)]
    assert np.all(off == 0.2)
    assert np.all(np.diag(r.weights) == 1.0)


def test_structure_four_nodes_matches_oracle():
    g = random_graph(np.random.default_rng(7), 14, 0.25)
    cfg = SimilarityConfig(hop_k=2, mu=0.8, mu0=0.1)
    nodes = [1, 4, 8, 11]
    r = build_relational_structure(g, nodes, cfg)
    np.testing.assert_allclose(r.weights, oracle_structure(g, nodes, cfg), rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(g=graphs(min_n=2, max_n=14), data=st.data())
def test_structure_invariants(g, data):
    method = data.draw(st.sampled_from(SIMILARITY_METHODS))
    mu = data.draw(st.floats(0.3, 0.95))
    cfg = SimilarityConfig(method=method, hop_k=data.draw(st.integers(1, 3)), mu=mu, mu0=mu / 3,
                           top_k=data.draw(st.one_of(st.none(), st.integers(1, 4))))
    m = data.draw(st.integers(1, g.n))
    nodes = data.draw(st.permutations(range(g.n)))[:m]
    W = build_relational_structure(g, nodes, cfg).weights
    assert np.array_equal(W, W.T)
    assert np.all(np.diag(W) == 1.0)
    off = W[~np.eye(m, dtype=bool)]
    assert np.all((off == cfg.mu0) | ((off >= cfg.mu) & (off <= 1.0)))


def test_label_propagation_two_cliques():
    A = np.zeros((8, 8))
    A[:4, :4] = 1
    A[4:, 4:] = 1
    np.fill_diagonal(A, 0)
    labels = np.array([0] * 4 + [1] * 4)
    g = Graph(A, np.ones((8, 1)), labels)
    res = label_propagation(g, [0, 5], [0, 1])
    np.testing.assert_array_equal(res.predictions, labels)
    assert not res.warning


def test_label_propagation_fully_labeled(rng):
    g = random_graph(rng, 10, 0.4, K=3)
    res = label_propagation(g, np.arange(10), g.labels)
    np.testing.assert_array_equal(res.predictions, g.labels)


def test_label_propagation_unlabeled_component_flagged():
    A = np.zeros((5, 5))
    A[0, 1] = A[1, 0] = A[1, 2] = A[2, 1] = 1
    A[3, 4] = A[4, 3] = 1
    g = Graph(A, np.ones((5, 1)), [1, 1, 0, 0, 0])
    res = label_propagation(g, [0, 2], [1, 0])
    assert res.warning
    np.testing.assert_array_equal(res.unlabeled_component, [False, False, False, True, True])
    assert res.predictions[3] == 0 and res.predictions[4] == 0


def test_label_propagation_requires_every_class():
    with pytest.raises(ValueError):
        label_propagation(path_graph(4), [0], [0], num_classes=2)


def test_label_propagation_barbell_matches_fixed_point():
    # two K4 cliques joined by a path through nodes 3-4
    A = np.zeros((8, 8))
    for block in (range(4), range(4, 8)):
        for i in block:
            for j in block:
                if i != j:
                    A[i, j] = 1
    A[3, 4] = A[4, 3] = 1
    g = Graph(A, np.ones((8, 1)), [0] * 4 + [1] * 4)
    lab, ys = np.array([0, 7]), np.array([0, 1])
    res = label_propagation(g, lab, ys, max_iters=10_000, tol=1e-14)
    # fixed point: Y_u = (I - P_uu)^{-1} P_ul Y_l
    P = normalize_adjacency(g)
    unl = np.setdiff1d(np.arange(8), lab)
    Yl = np.eye(2)[ys]
    Yu = np.linalg.solve(np.eye(unl.size) - P[np.ix_(unl, unl)], P[np.ix_(unl, lab)] @ Yl)
    np.testing.assert_allclose(res.scores[unl], Yu, atol=1e-10)
    np.testing.assert_array_equal(res.predictions[unl], np.argmax(Yu, axis=1))
    assert res.converged


@settings(max_examples=30, deadline=None)
@given(sizes=st.lists(st.integers(1, 5), min_size=2, max_size=4), seed=st.integers(0, 10**6))
def test_label_propagation_perfect_on_disconnected_classes(sizes, seed):
    rng = np.random.default_rng(seed)
    n = sum(sizes)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    A = np.zeros((n, n))
    start = 0
    for s in sizes:  # each class a connected path
        for i in range(start, start + s - 1):
            A[i, i + 1] = A[i + 1, i] = 1
        start += s
    g = Graph(A, np.ones((n, 1)), labels)
    picks = [rng.choice(np.flatnonzero(labels == k)) for k in range(len(sizes))]
    res = label_propagation(g, picks, np.arange(len(sizes)))
    assert np.mean(res.predictions == labels) == 1.0
