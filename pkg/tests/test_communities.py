import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from pipespace.communities import (Partition, WeightedGraph, _aggregate, _q, _set_partitions,
                                   adjusted_rand_index, brute_force_best_partition, canonical_labels,
                                   from_similarity, louvain, modularity)
from pipespace.dataset import all_pipelines
from pipespace.errors import AllZeroGraph, NegativeWeight, NodeSetMismatch, TooLarge, UncoveredNode
from pipespace.simmatrix import SimilarityMatrix


def _sm(r):
    r = np.asarray(r, dtype=float)
    return SimilarityMatrix(tuple(all_pipelines()[:len(r)]), r, "rh", "g1")


def two_triangles(bridge=0.0):
    w = np.zeros((6, 6))
    for block in ([0, 1, 2], [3, 4, 5]):
        for i, j in itertools.combinations(block, 2):
            w[i, j] = w[j, i] = 1.0
    w[2, 3] = w[3, 2] = bridge
    return WeightedGraph(w)


def random_graph(rng, n, density=0.6):
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    w = w + w.T
    if not w.any():
        w[0, 1] = w[1, 0] = 1.0
    return WeightedGraph(w)


def naive_q(g, labels, gamma=1.0):
    """Textbook double sum over node pairs."""
    a = g.adj
    k = a.sum(axis=1)
    m2 = a.sum()
    total = 0.0
    for i in range(g.n):
        for j in range(g.n):
            if labels[i] == labels[j]:
                total += a[i, j] - gamma * k[i] * k[j] / m2
    return total / m2


def test_from_similarity_triangle():
    g = from_similarity(_sm([[1, 0.9, 0.9], [0.9, 1, 0.9], [0.9, 0.9, 1]]))
    assert np.allclose(g.w, [[0, 0.9, 0.9], [0.9, 0, 0.9], [0.9, 0.9, 0]])
    assert g.total_weight_2m == pytest.approx(5.4, abs=1e-12)
    assert g.labels == tuple(str(p) for p in all_pipelines()[:3])


def test_from_similarity_clamping():
    r = [[1, 0.5, -0.1], [0.5, 1, 0.3], [-0.1, 0.3, 1]]
    g = from_similarity(_sm(r))
    assert g.w[0, 2] == 0.0 and g.n_clamped == 1
    with pytest.raises(NegativeWeight):
        from_similarity(_sm(r), clamp_negative=False)
    with pytest.raises(AllZeroGraph):
        from_similarity(_sm([[1, -0.2], [-0.2, 1]]))


def test_graph_validation():
    with pytest.raises(NegativeWeight):
        WeightedGraph([[0, -1], [-1, 0]])
    with pytest.raises(AllZeroGraph):
        WeightedGraph(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        WeightedGraph([[0, 1], [0.5, 0]])


def test_modularity_anchors():
    g = WeightedGraph([[0, 1], [1, 0]])
    assert modularity(g, [0, 0]) == pytest.approx(0.0, abs=1e-15)
    assert modularity(g, [0, 1]) == pytest.approx(-0.5, abs=1e-15)
    # two disjoint edges split along their components
    g2 = WeightedGraph([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    assert modularity(g2, [0, 0, 1, 1]) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(UncoveredNode):
        modularity(g2, [0, 0, 1])


def test_self_loop_convention():
    g = WeightedGraph([[1.0, 0], [0, 1.0]])
    assert g.adj[0, 0] == 2.0 and g.total_weight_2m == 4.0
    assert modularity(g, [0, 1]) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 9), gamma=st.sampled_from([0.5, 1.0, 2.0]))
def test_modularity_matches_naive_sum(seed, n, gamma):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    labels = rng.integers(0, 3, n)
    assert modularity(g, labels, gamma) == pytest.approx(naive_q(g, labels, gamma), abs=1e-12)
    one = [0] * n
    assert modularity(g, one, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_set_partitions_are_bell_numbers():
    assert [len(_set_partitions(n)) for n in range(1, 9)] == [1, 2, 5, 15, 52, 203, 877, 4140]
    rows = _set_partitions(6)
    assert len({tuple(r) for r in rows}) == 203
    assert all(canonical_labels(r) == tuple(r) for r in rows)


def test_brute_force_examples():
    best = brute_force_best_partition(two_triangles())
    assert best.assignment == (0, 0, 0, 1, 1, 1)
    assert best.modularity == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(TooLarge):
        brute_force_best_partition(WeightedGraph(np.ones((11, 11)) - np.eye(11)))


def test_brute_force_against_enumeration():
    rng = np.random.default_rng(3)
    for n in (4, 5):
        g = random_graph(rng, n)
        best = max(naive_q(g, r) for r in _set_partitions(n))
        assert brute_force_best_partition(g).modularity == pytest.approx(best, abs=1e-12)


def test_louvain_two_triangles():
    for seed in range(20):
        p = louvain(two_triangles(bridge=0.1), seed=seed)
        assert p.assignment == (0, 0, 0, 1, 1, 1)
        assert p.modularity == pytest.approx(modularity(two_triangles(0.1), p), abs=1e-15)


def test_louvain_complete_graph_single_community():
    g = WeightedGraph(np.ones((4, 4)) - np.eye(4))
    for seed in range(10):
        assert louvain(g, seed=seed).assignment == (0, 0, 0, 0)


def _planted_similarity(within, between):
    ps = all_pipelines()
    block = [(p.software, p.hrf_deriv) for p in ps]
    r = np.array([[1.0 if i == j else within if block[i] == block[j] else between
                   for j in range(24)] for i in range(24)])
    return SimilarityMatrix(tuple(ps), r, "rh", "g"), canonical_labels(block)


def test_louvain_recovers_planted_blocks():
    m, truth = _planted_similarity(0.93, 0.64)
    g = from_similarity(m)
    for seed in range(50):
        p = louvain(g, seed=seed)
        assert p.assignment == truth
        assert adjusted_rand_index(p, Partition(truth, nodes=g.labels)) == 1.0


def test_louvain_deterministic_and_scale_invariant():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_graph(rng, 12)
        p = louvain(g, seed=7)
        assert louvain(g, seed=7) == p
        scaled = louvain(WeightedGraph(g.w * 3.5), seed=7)
        assert scaled.assignment == p.assignment
        assert scaled.modularity == pytest.approx(p.modularity, abs=1e-12)
        assert p.modularity >= -1e-12


def test_louvain_never_beats_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(40):
        g = random_graph(rng, int(rng.integers(3, 9)))
        assert louvain(g, seed=1).modularity <= brute_force_best_partition(g).modularity + 1e-12


def test_aggregation_preserves_modularity():
    rng = np.random.default_rng(9)
    for _ in range(30):
        g = random_graph(rng, 10)
        comm = np.asarray(canonical_labels(rng.integers(0, 4, 10)))
        coarse = _aggregate(g.adj, comm)
        assert coarse.sum() == pytest.approx(g.adj.sum(), rel=1e-12)
        assert _q(coarse, np.arange(coarse.shape[0]), 1.0) == pytest.approx(_q(g.adj, comm, 1.0), abs=1e-12)


def test_ari_examples():
    a = Partition((0, 0, 1, 1))
    assert adjusted_rand_index(a, Partition((1, 1, 0, 0))) == 1.0
    assert adjusted_rand_index(a, Partition((0, 1, 1, 1))) == pytest.approx(
        adjusted_rand_score([0, 0, 1, 1], [0, 1, 1, 1]), abs=1e-12)
    assert adjusted_rand_index(Partition((0, 0, 0)), Partition((0, 0, 0))) == 1.0
    with pytest.raises(NodeSetMismatch):
        adjusted_rand_index(Partition((0, 1), nodes=("a", "b")), Partition((0, 1), nodes=("a", "c")))


def test_ari_aligns_by_node_name():
    p = Partition((0, 0, 1), nodes=("a", "b", "c"))
    q = Partition((0, 1, 1), nodes=("c", "a", "b"))
    assert adjusted_rand_index(p, q) == 1.0
    q2 = Partition((0, 1, 1), nodes=("a", "b", "c"))
    assert adjusted_rand_index(p, q2) == pytest.approx(adjusted_rand_score([0, 0, 1], [0, 1, 1]), abs=1e-12)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=2, max_size=30))
def test_ari_against_sklearn(pairs):
    a, b = zip(*pairs)
    ours = adjusted_rand_index(Partition(a), Partition(b))
    assert ours == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
    assert ours == pytest.approx(adjusted_rand_index(Partition(b), Partition(a)), abs=1e-12)


def test_partition_json_round_trip():
    p = Partition((0, 1, 0, 2), 0.25, 1.0, ("d", "b", "a", "c"))
    obj = p.to_json("rh", "g1", 3)
    assert obj["communities"] == [["d", "a"], ["b"], ["c"]]
    back = Partition.from_json(obj)
    assert back.nodes == ("a", "b", "c", "d")
    assert adjusted_rand_index(back, p) == 1.0
    assert math.isclose(back.modularity, 0.25)


def test_brute_force_small_spec_examples():
    edge = brute_force_best_partition(WeightedGraph([[0, 1], [1, 0]]))
    assert edge.assignment == (0, 0) and edge.modularity == pytest.approx(0.0, abs=1e-15)
    path = np.zeros((4, 4))
    for i in range(3):
        path[i, i + 1] = path[i + 1, i] = 1.0
    g = WeightedGraph(path)
    assert len(_set_partitions(4)) == 15
    best = brute_force_best_partition(g)
    ref = max(naive_q(g, r) for r in _set_partitions(4))
    assert best.modularity == pytest.approx(ref, abs=1e-15)
    for seed in range(10):
        assert louvain(g, seed=seed).modularity == pytest.approx(best.modularity, abs=1e-15)


def test_modularity_against_networkx():
    nx = pytest.importorskip("networkx")
    from networkx.algorithms.community import modularity as nx_modularity
    rng = np.random.default_rng(12)
    for _ in range(30):
        g = random_graph(rng, 9)
        labels = canonical_labels(rng.integers(0, 3, 9))
        comms = [{i for i in range(9) if labels[i] == c} for c in range(max(labels) + 1)]
        for gamma in (0.5, 1.0, 1.5):
            ref = nx_modularity(nx.from_numpy_array(g.w), comms, weight="weight", resolution=gamma)
            assert modularity(g, labels, gamma) == pytest.approx(ref, abs=1e-12)
