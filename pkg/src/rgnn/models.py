"""Two-layer GCN and GraphSAGE networks producing pre-softmax logits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ContractError, Parameter, Tape, Value
from .graph import Graph, gcn_adjacency, row_normalize

MODEL_KINDS = ("gcn", "sage-mean", "sage-maxpool")


@dataclass
class ModelConfig:
    kind: str = "gcn"
    hidden_dim: int | None = None  # 16 for GCN, 64 for GraphSAGE
    dropout: float = 0.5
    weight_decay: float = 5e-4
    l2_normalize: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.hidden_dim is None:
            self.hidden_dim = 16 if self.kind == "gcn" else 64
        if self.hidden_dim < 1:
            raise ContractError("hidden_dim must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be non-negative")


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ContractError(f"glorot_init needs positive dims, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def dropout(x: Value, rate: float, training: bool, rng: np.random.Generator | None) -> Value:
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return ad.mul_const(x, keep / (1.0 - rate))


def sparse_input(x, max_density: float = 0.25):
    """CSR copy of a mostly-zero feature matrix (bag-of-words), else the dense array."""
    if sp.issparse(x):
        return sp.csr_matrix(x, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.size and np.count_nonzero(x) <= max_density * x.size:
        return sp.csr_matrix(x)
    return x


def input_dropout(x, rate: float, training: bool, rng: np.random.Generator | None):
    """Dropout on the raw (untaped) input; a sparse input only masks its stored entries."""
    if not training or rate == 0.0:
        return x
    if sp.issparse(x):
        keep = rng.random(x.nnz) >= rate
        out = x.copy()
        out.data = x.data * (keep / (1.0 - rate))
        return out
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def input_matmul(tape: Tape, x, w: Value) -> Value:
    return ad.spmm(x, w) if sp.issparse(x) else ad.matmul(tape.constant(x), w)


def neighbor_max(adj: sp.csr_matrix, z: Value) -> Value:
    """Elementwise max of ``z`` over each node's neighbors; isolated nodes get 0.

    The adjoint routes each output entry to the first neighbor attaining the
    max (a subgradient choice for ties).
    """
    Z = z.data
    n, d = Z.shape
    counts = np.diff(adj.indptr)
    nonempty = np.flatnonzero(counts)
    out = np.zeros((n, d))
    if nonempty.size == 0:
        return ad.custom("neighbor_max", [z], out, lambda g: (np.zeros_like(Z),))
    starts = adj.indptr[:-1][nonempty]
    zg = Z[adj.indices]
    out[nonempty] = np.maximum.reduceat(zg, starts, axis=0)

    def back(g):
        rows = np.repeat(np.arange(n), counts)
        slot = np.arange(zg.shape[0])[:, None]
        cand = np.where(zg == out[rows], slot, zg.shape[0])
        first = np.minimum.reduceat(cand, starts, axis=0)
        src = adj.indices[first]
        flat = src * d + np.arange(d)[None, :]
        dz = np.bincount(flat.ravel(), weights=g[nonempty].ravel(), minlength=n * d)
        return (dz.reshape(n, d),)

    return ad.custom("neighbor_max", [z], out, back)


def l2_normalize_rows(x: Value) -> Value:
    X = x.data
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    y = X / safe

    def back(g):
        return ((g - y * np.sum(y * g, axis=1, keepdims=True)) / safe,)

    return ad.custom("l2_normalize", [x], y, back)


class GcnModel:
    """O = Â · ReLU(Â · X · W0) · W1."""

    def __init__(self, g: Graph, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.a_hat = gcn_adjacency(g)
        h = cfg.hidden_dim
        self.w0 = Parameter(glorot_init(g.num_features, h, rng), name="W0")
        self.w1 = Parameter(glorot_init(h, g.k, rng), name="W1")

    def parameters(self) -> list[Parameter]:
        return [self.w0, self.w1]

    def decay_parameters(self) -> list[Parameter]:
        return [self.w0]

    def forward(self, tape: Tape, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Value, dict[str, Value]]:
        p = self.cfg.dropout
        w0, w1 = tape.watch(self.w0), tape.watch(self.w1)
        x = input_dropout(x, p, training, rng)
        h = ad.relu(ad.spmm(self.a_hat, input_matmul(tape, x, w0)))
        hidden = h
        h = dropout(h, p, training, rng)
        return ad.spmm(self.a_hat, ad.matmul(h, w1)), {"hidden": hidden}


class SageModel:
    """Two GraphSAGE layers: H' = σ(CONCAT(H, AGG(H)) · W), σ = ReLU then identity."""

    def __init__(self, g: Graph, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.aggregator = cfg.kind.split("-", 1)[1]
        self.adj = g.adjacency
        self.mean_adj = row_normalize(g.adjacency)
        dims = [g.num_features, cfg.hidden_dim, g.k]
        self.weights: list[Parameter] = []
        self.pools: list[Parameter | None] = []
        for layer, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            pool = None
            if self.aggregator == "maxpool":
                pool = Parameter(glorot_init(d_in, d_in, rng), name=f"Wpool{layer}")
            self.pools.append(pool)
            self.weights.append(Parameter(glorot_init(2 * d_in, d_out, rng), name=f"W{layer}"))

    def parameters(self) -> list[Parameter]:
        params = []
        for w, pool in zip(self.weights, self.pools):
            params += [pool, w] if pool is not None else [w]
        return params

    def decay_parameters(self) -> list[Parameter]:
        first = [self.weights[0]]
        return first + ([self.pools[0]] if self.pools[0] is not None else [])

    def aggregate(self, tape: Tape, h: Value, layer: int) -> Value:
        if self.aggregator == "mean":
            return ad.spmm(self.mean_adj, h)
        z = ad.relu(ad.matmul(h, tape.watch(self.pools[layer])))
        return neighbor_max(self.adj, z)

    def _first_layer(self, tape: Tape, x) -> Value:
        # the raw input is a constant, so its aggregate and concat stay off the tape
        w = tape.watch(self.weights[0])
        if self.aggregator == "mean":
            a = self.mean_adj @ x
            if sp.issparse(x):
                return ad.spmm(sp.hstack([x, a], format="csr"), w)
            return ad.matmul(tape.constant(np.hstack([x, np.asarray(a)])), w)
        z = ad.relu(input_matmul(tape, x, tape.watch(self.pools[0])))
        dense = x.toarray() if sp.issparse(x) else x
        return ad.matmul(ad.concat_cols(tape.constant(dense), neighbor_max(self.adj, z)), w)

    def forward(self, tape: Tape, x, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Value, dict[str, Value]]:
        p = self.cfg.dropout
        h = self._first_layer(tape, input_dropout(x, p, training, rng))
        hidden = None
        last = len(self.weights) - 1
        for layer in range(1, last + 1):
            h = ad.relu(h)
            if self.cfg.l2_normalize:
                h = l2_normalize_rows(h)
            hidden = h
            h = dropout(h, p, training, rng)
            a = self.aggregate(tape, h, layer)
            h = ad.matmul(ad.concat_cols(h, a), tape.watch(self.weights[layer]))
        return h, {"hidden": hidden}


def build_model(g: Graph, cfg: ModelConfig, rng: np.random.Generator):
    return GcnModel(g, cfg, rng) if cfg.kind == "gcn" else SageModel(g, cfg, rng)
