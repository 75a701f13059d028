"""Synthetic graphs for tests, smoke runs and scale checks."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graph import Graph, from_edges


def two_triangles(feature_dim: int = 4) -> Graph:
    """Two triangles joined by one bridge edge, labels by triangle, orthogonal features."""
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]
    x = np.zeros((6, feature_dim))
    x[:3, 0] = 1.0
    x[3:, 1] = 1.0
    return from_edges(6, edges, x, [0, 0, 0, 1, 1, 1], 2)


def two_cliques(sizes=(3, 3), feature_dim: int = 4) -> Graph:
    """Disjoint cliques, one class each, one-hot features per class."""
    edges, labels, start = [], [], 0
    for c, m in enumerate(sizes):
        nodes = range(start, start + m)
        edges += [(i, j) for i in nodes for j in nodes if i < j]
        labels += [c] * m
        start += m
    x = np.zeros((start, feature_dim))
    x[np.arange(start), labels] = 1.0
    return from_edges(start, edges, x, labels, len(sizes))


def random_graph(n: int, p: float, rng: np.random.Generator, k: int = 3, d: int = 5) -> Graph:
    """Erdős–Rényi graph with Gaussian features and uniform labels."""
    upper = np.triu(rng.random((n, n)) < p, 1)
    edges = np.argwhere(upper)
    labels = rng.integers(0, k, size=n)
    labels[:k] = np.arange(k)
    return from_edges(n, edges, rng.normal(size=(n, d)), labels, k)


def random_similarity(n: int, p: float, rng: np.random.Generator, normalized: bool = True) -> sp.csr_matrix:
    """Symmetric non-negative weights on a random sparsity pattern."""
    upper = np.triu(rng.random((n, n)) < p, 1)
    w = np.triu(rng.uniform(0.1, 1.0, size=(n, n)), 1) * upper
    m = sp.csr_matrix(w + w.T)
    if normalized:
        from .graph import sym_normalize
        m = sym_normalize(m)
    return m


def contextual_sbm(n: int, k: int, avg_degree: float, homophily: float, d: int,
                   feature_signal: float, rng: np.random.Generator, sparse_words: bool = True) -> Graph:
    """Stochastic block model with class-dependent bag-of-words style features.

    ``homophily`` is the expected fraction of edges joining same-class nodes.
    Features are binary: each class has its own word distribution and
    ``feature_signal`` in [0, 1] mixes it with a shared background.
    """
    labels = rng.integers(0, k, size=n)
    labels[:k] = np.arange(k)
    m = int(round(n * avg_degree / 2))
    src = rng.integers(0, n, size=m)
    same = rng.random(m) < homophily
    dst = np.empty(m, dtype=np.int64)
    by_class = [np.flatnonzero(labels == c) for c in range(k)]
    for e in range(m):
        c = labels[src[e]]
        if same[e]:
            pool = by_class[c]
        else:
            other = rng.integers(0, k - 1)
            pool = by_class[other if other < c else other + 1]
        dst[e] = pool[rng.integers(0, pool.size)]
    edges = np.stack([src, dst], axis=1)
    if sparse_words:
        words = 20
        background = np.full(d, 1.0 / d)
        topics = rng.dirichlet(np.full(d, 0.05), size=k)
        x = np.zeros((n, d))
        for i in range(n):
            probs = feature_signal * topics[labels[i]] + (1 - feature_signal) * background
            x[i, rng.choice(d, size=words, p=probs / probs.sum())] = 1.0
    else:
        centers = rng.normal(size=(k, d))
        x = feature_signal * centers[labels] + rng.normal(size=(n, d))
    return from_edges(n, edges, x, labels, k)
