"""Non-local TV regularized softmax.

The dual variable lives on the directed edge slots of the similarity matrix
``S``: one slot per stored entry ``(i, j)``, in CSR order, with one column
per class. The non-local gradient is zero off the edge set and the
divergence only reads edge slots, so nothing is lost by not storing the
dense ``N x N`` field.

One forward pass runs ``T`` alternating steps starting from
``A0 = softmax(O)`` and ``eta0 = 0``::

    eta_t = P_B(eta_{t-1} - tau * grad_S A_{t-1})
    A_t   = softmax((O - lam * div_S eta_t) / eps)

and every step is recorded on the tape so that ``O``, ``tau``, ``lam`` and
``eps`` all receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ContractError, Parameter, Tape, Value

ROW_TOL = 1e-12


class InvariantError(AssertionError):
    pass


@dataclass(frozen=True, eq=False)
class EdgeSlots:
    """Directed edge slots of a symmetric similarity matrix."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    rev: np.ndarray
    by_row: sp.csr_matrix  # N x nnz incidence, by_row[i, e] = 1 iff rows[e] == i
    by_col: sp.csr_matrix

    @classmethod
    def from_similarity(cls, s) -> "EdgeSlots":
        s = sp.csr_matrix(s, dtype=np.float64, copy=True)
        s.sum_duplicates()
        s.eliminate_zeros()
        s.sort_indices()
        n = s.shape[0]
        if s.shape != (n, n):
            raise ContractError(f"similarity must be square, got {s.shape}")
        if np.any(s.data < 0):
            raise ContractError("similarity weights must be non-negative")
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(s.indptr))
        cols = s.indices.astype(np.int64)
        key = rows * n + cols
        rkey = cols * n + rows
        rev = np.searchsorted(key, rkey)
        if rev.size and (np.any(rev >= key.size) or np.any(key[np.minimum(rev, key.size - 1)] != rkey)):
            raise ContractError("similarity sparsity pattern must be symmetric")
        if np.any(s.data[rev] != s.data):
            raise ContractError("similarity weights must be symmetric")
        nnz = rows.size
        ones = np.ones(nnz)
        by_row = sp.csr_matrix((ones, (rows, np.arange(nnz))), shape=(n, nnz))
        by_col = sp.csr_matrix((ones, (cols, np.arange(nnz))), shape=(n, nnz))
        return cls(n, rows, cols, s.data.copy(), rev, by_row, by_col)

    @property
    def nnz(self) -> int:
        return self.rows.size


def as_slots(s) -> EdgeSlots:
    return s if isinstance(s, EdgeSlots) else EdgeSlots.from_similarity(s)


def _wcol(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return w * x if x.ndim == 1 else w[:, None] * x


def nl_gradient(s, a: np.ndarray) -> np.ndarray:
    """Slot ``(i, j)`` holds ``S_ij * (a[j] - a[i])``; ``a`` is ``(N,)`` or ``(N, K)``."""
    sl = as_slots(s)
    a = np.asarray(a, dtype=np.float64)
    return _wcol(sl.weights, a[sl.cols] - a[sl.rows])


def nl_divergence(s, eta: np.ndarray) -> np.ndarray:
    """``out[i] = sum_j S_ij * (eta(i, j) - eta(j, i))``."""
    sl = as_slots(s)
    eta = np.asarray(eta, dtype=np.float64)
    return np.asarray(sl.by_row @ _wcol(sl.weights, eta - eta[sl.rev]))


def row_norms(s, eta: np.ndarray) -> np.ndarray:
    """Euclidean norm of each node's outgoing slots, per class: shape ``(N, K)``."""
    sl = as_slots(s)
    eta = np.asarray(eta, dtype=np.float64)
    return np.sqrt(np.asarray(sl.by_row @ (eta * eta)))


def _project(sl: EdgeSlots, eta: np.ndarray, mode: str):
    """Returns the projected field and the per-slot divisor (1 where untouched)."""
    norms = row_norms(sl, eta)
    # rows already normalized may sit an ulp above one; leaving them alone keeps P idempotent
    over = norms > 1.0 + ROW_TOL
    if mode == "row":
        div_node = np.where(over, norms, 1.0)
    elif mode == "global":
        gmax = norms.max(axis=0, initial=0.0)
        div_node = np.where(over, gmax[None, :], 1.0)
    elif mode == "clip":
        return np.clip(eta, -1.0, 1.0), None, norms, np.abs(eta) > 1.0
    else:
        raise ContractError(f"unknown projection mode {mode!r}")
    div_slot = div_node[sl.rows]
    return eta / div_slot, div_slot, norms, over


def project_unit_ball(s, eta: np.ndarray, mode: str = "row") -> np.ndarray:
    """Rescale every node row whose norm exceeds one.

    ``mode="row"`` divides an offending row by its own norm (the Euclidean
    projection onto the unit ball); ``mode="global"`` divides it by the
    largest row norm of that class. ``mode="clip"`` clips each slot to
    ``[-1, 1]`` (the sup-norm ball, taken entrywise).
    """
    sl = as_slots(s)
    eta = np.asarray(eta, dtype=np.float64)
    squeeze = eta.ndim == 1
    out = _project(sl, eta[:, None] if squeeze else eta, mode)[0]
    return out[:, 0] if squeeze else out


# ---------------------------------------------------------------- tape ops


def gradient_op(sl: EdgeSlots, a: Value) -> Value:
    w = sl.weights[:, None]

    def back(g):
        wg = w * g
        return (np.asarray(sl.by_col @ wg) - np.asarray(sl.by_row @ wg),)

    return ad.custom("nl_gradient", [a], nl_gradient(sl, a.data), back)


def divergence_op(sl: EdgeSlots, eta: Value) -> Value:
    w = sl.weights[:, None]

    def back(g):
        t = w * np.asarray(sl.by_row.T @ g)
        return (t - t[sl.rev],)

    return ad.custom("nl_divergence", [eta], nl_divergence(sl, eta.data), back)


def project_op(sl: EdgeSlots, eta: Value, mode: str = "row") -> Value:
    x = eta.data
    y, div_slot, norms, over = _project(sl, x, mode)

    if mode == "clip":
        def back(g):
            return (np.where(over, 0.0, g),)

        return ad.custom("project_unit_ball", [eta], y, back)

    over_slot = over[sl.rows]
    if mode == "row":
        def back(g):
            yg = np.asarray(sl.by_row @ (y * g))[sl.rows]
            return (np.where(over_slot, (g - y * yg) / div_slot, g),)
    else:
        gmax = norms.max(axis=0, initial=0.0)
        argmax = norms.argmax(axis=0) if norms.size else np.zeros(x.shape[1], dtype=np.int64)

        def back(g):
            dx = g / div_slot
            dm = -np.sum(np.where(over_slot, g * x, 0.0), axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                dm = np.where(gmax > 1.0 + ROW_TOL, dm / gmax**2, 0.0)
            in_max_row = sl.rows[:, None] == argmax[None, :]
            active = in_max_row & (gmax > 1.0 + ROW_TOL)[None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                dx = dx + np.where(active, dm[None, :] * x / gmax[None, :], 0.0)
            return (dx,)

    return ad.custom("project_unit_ball", [eta], y, back)


# ----------------------------------------------------------------- forward


@dataclass
class RegSoftmaxParams:
    tau: Parameter
    lam: Parameter
    eps: Parameter
    t_steps: int = 1
    projection: str = "row"

    @classmethod
    def create(cls, tau=1.0, lam=1.0, eps=1.0, t_steps=1, lr_tau=0.01, lr_lam=0.001,
               lr_eps=0.01, learn_tau=True, learn_lam=True, learn_eps=True, projection="row"):
        return cls(
            Parameter(tau, lr=lr_tau, learnable=learn_tau, name="tau"),
            Parameter(lam, lr=lr_lam, learnable=learn_lam, name="lambda"),
            Parameter(eps, lr=lr_eps, learnable=learn_eps, name="epsilon"),
            t_steps,
            projection,
        )

    def parameters(self) -> list[Parameter]:
        return [self.tau, self.lam, self.eps]

    def clamp(self):
        self.eps.value = np.maximum(self.eps.value, 1e-3)
        self.tau.value = np.maximum(self.tau.value, 1e-4)
        self.lam.value = np.maximum(self.lam.value, 0.0)


def check_row_stochastic(a: np.ndarray, where: str = "", strict: bool = False):
    sums = a.sum(axis=1)
    if np.max(np.abs(sums - 1.0), initial=0.0) > ROW_TOL:
        raise InvariantError(f"{where}: rows do not sum to one")
    if np.any(a < 0) or (strict and np.any(a <= 0)):
        raise InvariantError(f"{where}: negative probability")


def check_dual_feasible(sl: EdgeSlots, eta: np.ndarray, where: str = "", mode: str = "row"):
    if not eta.size:
        return
    worst = np.abs(eta).max() if mode == "clip" else row_norms(sl, eta).max()
    if worst > 1.0 + ROW_TOL:
        raise InvariantError(f"{where}: dual field leaves the unit ball")


def reg_softmax_forward(o: Value, s, p: RegSoftmaxParams, check: bool = False,
                        trace: list | None = None) -> Value:
    """Regularized softmax of the logits ``o`` (N x K) on the tape of ``o``.

    ``check`` asserts row-stochasticity and dual feasibility after every
    step. ``trace``, when given, collects ``(eta_t, A_t)`` arrays.
    """
    sl = as_slots(s)
    if sl.n != o.shape[0]:
        raise ContractError(f"similarity has {sl.n} nodes, logits have {o.shape[0]} rows")
    if not p.eps.value > 0:
        raise ContractError(f"epsilon must be positive, got {float(p.eps.value)}")
    if not p.tau.value > 0:
        raise ContractError(f"tau must be positive, got {float(p.tau.value)}")
    if p.t_steps < 1:
        raise ContractError(f"need at least one iteration, got T={p.t_steps}")
    tape: Tape = o.tape
    tau = tape.watch(p.tau)
    lam = tape.watch(p.lam)
    inv_eps = ad.reciprocal(tape.watch(p.eps))

    a = ad.row_softmax(o)
    eta = tape.constant(np.zeros((sl.nnz, o.shape[1])))
    if check:
        check_row_stochastic(a.data, "A0")
    for t in range(1, p.t_steps + 1):
        step = ad.scale_by(gradient_op(sl, a), tau)
        eta = project_op(sl, ad.sub(eta, step), p.projection)
        div = divergence_op(sl, eta)
        a = ad.row_softmax(ad.scale_by(ad.sub(o, ad.scale_by(div, lam)), inv_eps))
        if check:
            check_dual_feasible(sl, eta.data, f"eta{t}", p.projection)
            check_row_stochastic(a.data, f"A{t}")
        if trace is not None:
            trace.append((eta.data, a.data))
    return a
