"""Graphs, normalized adjacency and similarity weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .autodiff import ContractError


def canonical_csr(m) -> sp.csr_matrix:
    """CSR copy with summed duplicates and sorted column indices."""
    m = sp.csr_matrix(m, dtype=np.float64, copy=True)
    m.sum_duplicates()
    m.sort_indices()
    return m


def is_symmetric(m: sp.csr_matrix) -> bool:
    return (abs(m - m.T) > 0).nnz == 0


@dataclass(frozen=True, eq=False)
class Graph:
    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        a = canonical_csr(self.adjacency)
        a.eliminate_zeros()
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ContractError(f"adjacency must be square, got {a.shape}")
        if x.ndim != 2 or x.shape[0] != n:
            raise ContractError(f"features shape {x.shape} does not match {n} nodes")
        if y.shape != (n,):
            raise ContractError(f"labels shape {y.shape} does not match {n} nodes")
        if self.k < 2:
            raise ContractError(f"need at least two classes, got k={self.k}")
        if n and (y.min() < 0 or y.max() >= self.k):
            raise ContractError(f"labels must lie in [0, {self.k})")
        if a.diagonal().any():
            raise ContractError("adjacency must not store self-loops")
        if np.any(a.data != 1.0):
            raise ContractError("adjacency must be binary")
        if not is_symmetric(a):
            raise ContractError("adjacency must be symmetric")
        for name, val in (("adjacency", a), ("features", x), ("labels", y)):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def one_hot(self) -> np.ndarray:
        y = np.zeros((self.n, self.k))
        y[np.arange(self.n), self.labels] = 1.0
        return y

    def subgraph(self, nodes: np.ndarray) -> "Graph":
        nodes = np.asarray(nodes)
        a = self.adjacency[nodes][:, nodes]
        return Graph(a, self.features[nodes], self.labels[nodes], self.k)

    def permuted(self, perm: np.ndarray) -> "Graph":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        return self.subgraph(perm)


def from_edges(n: int, edges, features, labels, k: int) -> Graph:
    """Build an undirected graph; duplicate edges and self-loops are dropped."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    a.sum_duplicates()
    a.data[:] = 1.0
    return Graph(a, features, labels, k)


def add_self_loops(g: Graph) -> sp.csr_matrix:
    return canonical_csr(g.adjacency + sp.identity(g.n, format="csr"))


def sym_normalize(m) -> sp.csr_matrix:
    """D^{-1/2} M D^{-1/2} with D the row sums of ``m``; zero rows stay zero."""
    m = canonical_csr(m)
    if np.any(m.data < 0):
        raise ContractError("sym_normalize requires non-negative entries")
    m.eliminate_zeros()
    deg = np.asarray(m.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))
    out = m.copy()
    out.data = m.data / np.sqrt(deg[rows] * deg[m.indices])
    return out


def gcn_adjacency(g: Graph) -> sp.csr_matrix:
    """Â = D̃^{-1/2} (A + I) D̃^{-1/2}."""
    return sym_normalize(add_self_loops(g))


def similarity(g: Graph) -> sp.csr_matrix:
    """Normalized similarity over the raw adjacency (no self-loops)."""
    return sym_normalize(g.adjacency)


def ideal_similarity(labels, k: int) -> sp.csr_matrix:
    """Weight 1 between every ordered pair of distinct same-class nodes."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    rows, cols = [], []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        m = members.size
        if m < 2:
            continue
        r = np.repeat(members, m)
        q = np.tile(members, m)
        keep = r != q
        rows.append(r[keep])
        cols.append(q[keep])
    if rows:
        r, q = np.concatenate(rows), np.concatenate(cols)
    else:
        r = q = np.zeros(0, dtype=np.int64)
    return canonical_csr(sp.csr_matrix((np.ones(r.size), (r, q)), shape=(n, n)))


def row_normalize(m) -> sp.csr_matrix:
    """D^{-1} M; rows summing to zero stay zero (mean aggregation)."""
    m = canonical_csr(m)
    m.eliminate_zeros()
    deg = np.asarray(m.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))
    out = m.copy()
    out.data = m.data / deg[rows]
    return out


def largest_connected_component(g: Graph) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on the largest component and the kept original ids.

    Kept nodes retain their relative order. Among equally large components
    the one containing the smallest node id wins.
    """
    ncomp, comp = connected_components(g.adjacency, directed=False)
    if ncomp <= 1:
        return g, np.arange(g.n)
    sizes = np.bincount(comp)
    best = int(np.argmax(sizes))
    keep = np.flatnonzero(comp == best)
    return g.subgraph(keep), keep
