import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from rgnn.autodiff import ContractError
from rgnn.graph import (
    Graph,
    add_self_loops,
    from_edges,
    ideal_similarity,
    is_symmetric,
    largest_connected_component,
    similarity,
    sym_normalize,
)
from rgnn.synthetic import random_graph, two_cliques


def _graph(n, edges, k=2):
    labels = np.arange(n) % k
    return from_edges(n, edges, np.ones((n, 1)), labels, k)


def test_add_self_loops_examples():
    single = Graph(sp.csr_matrix((1, 1)), np.ones((1, 1)), [0], 2)
    assert np.array_equal(add_self_loops(single).toarray(), [[1.0]])
    assert np.array_equal(add_self_loops(_graph(2, [(0, 1)])).toarray(), np.ones((2, 2)))


def test_self_loop_count_formula():
    g = random_graph(40, 0.1, np.random.default_rng(0))
    assert add_self_loops(g).nnz == 2 * g.num_edges + g.n


def test_sym_normalize_examples():
    assert np.allclose(sym_normalize(sp.csr_matrix(np.ones((2, 2)))).toarray(), 0.5)
    s = sym_normalize(_graph(3, [(0, 1), (1, 2)]).adjacency).toarray()
    assert s[0, 1] == pytest.approx(1 / np.sqrt(2), abs=1e-15)
    with pytest.raises(ContractError):
        sym_normalize(sp.csr_matrix(np.array([[0.0, -1.0], [-1.0, 0.0]])))


def test_sym_normalize_matches_dense_oracle():
    g = random_graph(30, 0.15, np.random.default_rng(1))
    m = add_self_loops(g).toarray()
    d = m.sum(axis=1)
    oracle = m / np.sqrt(np.outer(d, d))
    assert np.max(np.abs(sym_normalize(m).toarray() - oracle)) < 1e-12


def test_regular_graph_normalized_rows_sum_to_one():
    n = 10
    ring = [(i, (i + 1) % n) for i in range(n)] + [(i, (i + 2) % n) for i in range(n)]
    g = _graph(n, ring)
    a_hat = sym_normalize(add_self_loops(g))
    assert np.all(np.asarray(a_hat.sum(axis=1)).ravel() == 1.0)


def test_similarity_examples():
    g = _graph(2, [(0, 1)])
    assert np.array_equal(similarity(g).toarray(), [[0.0, 1.0], [1.0, 0.0]])
    iso = _graph(3, [(0, 1)])
    s = similarity(iso).toarray()
    assert not s[2].any() and not s[:, 2].any()
    g = random_graph(25, 0.2, np.random.default_rng(2))
    assert (similarity(g) != sym_normalize(g.adjacency)).nnz == 0


def test_similarity_entries_follow_degree_formula():
    g = random_graph(25, 0.2, np.random.default_rng(3))
    s = similarity(g).tocoo()
    deg = np.asarray(g.adjacency.sum(axis=1)).ravel()
    assert np.max(np.abs(s.data - 1 / np.sqrt(deg[s.row] * deg[s.col]))) < 1e-12
    assert (similarity(g) != 0).nnz == g.adjacency.nnz


def test_graph_rejects_invalid_input():
    with pytest.raises(ContractError):
        Graph(sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]])), np.ones((2, 1)), [0, 1], 2)
    with pytest.raises(ContractError):
        Graph(sp.csr_matrix(np.eye(2)), np.ones((2, 1)), [0, 1], 2)
    with pytest.raises(ContractError):
        _graph(2, [(0, 1)], k=1)
    with pytest.raises(ContractError):
        Graph(sp.csr_matrix((2, 2)), np.ones((2, 1)), [0, 2], 2)


def test_from_edges_dedupes_and_symmetrizes():
    g = _graph(3, [(0, 1), (1, 0), (0, 1), (2, 2)])
    assert g.num_edges == 1 and is_symmetric(g.adjacency)


def test_lcc_examples():
    g = random_graph(20, 0.5, np.random.default_rng(4))
    sub, keep = largest_connected_component(g)
    assert sub is g and np.array_equal(keep, np.arange(20))
    cliques = two_cliques((3, 5))
    sub, keep = largest_connected_component(cliques)
    assert sub.n == 5 and sub.num_edges == 10 and np.array_equal(keep, np.arange(3, 8))
    assert np.all(sub.labels == 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lcc_is_idempotent_and_symmetric(seed):
    g = random_graph(25, 0.06, np.random.default_rng(seed))
    once, _ = largest_connected_component(g)
    twice, keep = largest_connected_component(once)
    assert np.array_equal(keep, np.arange(once.n))
    assert (once.adjacency != twice.adjacency).nnz == 0
    assert is_symmetric(once.adjacency)


def test_ideal_similarity_examples():
    s = ideal_similarity([0, 0, 1], 2)
    assert set(zip(*s.nonzero())) == {(0, 1), (1, 0)}
    n = 6
    full = ideal_similarity(np.zeros(n, dtype=int), 2)
    assert full.nnz == n * (n - 1) and np.all(full.data == 1.0)
    assert not full.diagonal().any() and is_symmetric(full)


def test_ideal_similarity_matches_label_rule():
    labels = np.random.default_rng(5).integers(0, 4, size=30)
    dense = ideal_similarity(labels, 4).toarray()
    oracle = (labels[:, None] == labels[None, :]).astype(float)
    np.fill_diagonal(oracle, 0.0)
    assert np.array_equal(dense, oracle)
