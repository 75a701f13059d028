"""Reverse-mode differentiation over dense float64 matrices.

A :class:`Tape` records every operation as a node holding its forward value,
its parents and a closure mapping the output adjoint to parent adjoints.
Nodes are appended in execution order, so parents always precede children
and the backward pass is a single reverse sweep.

Sparse matrices (``scipy.sparse`` CSR) only ever enter as constants: the
graph is fixed data and never receives a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass
class Parameter:
    """A trainable quantity: a weight matrix or a scalar hyperparameter."""

    value: np.ndarray
    lr: float = 0.01
    learnable: bool = True
    name: str = ""
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        if not self.lr > 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


class Value:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", id: int):
        self.tape = tape
        self.id = id

    @property
    def data(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return self.data.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Value(id={self.id}, op={self.tape.nodes[self.id].op}, shape={self.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []
        self._params: dict[int, Parameter] = {}

    def _push(self, op, parents, value, backward=None) -> Value:
        value = np.asarray(value, dtype=np.float64)
        _check_finite(op, value)
        self.nodes.append(_Node(op, tuple(parents), value, backward))
        return Value(self, len(self.nodes) - 1)

    def constant(self, x) -> Value:
        """Non-differentiated leaf; the array is not copied and must not be mutated."""
        return self._push("const", (), np.asarray(x, dtype=np.float64))

    def watch(self, param: Parameter) -> Value:
        """Leaf node whose adjoint is written to ``param.grad`` on backward."""
        v = self._push("param", (), param.value.copy())
        self._params[v.id] = param
        return v

    def backward(self, loss: Value) -> None:
        if loss.tape is not self:
            raise ContractError("loss belongs to a different tape")
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * (loss.id + 1)
        grads[loss.id] = np.ones_like(loss.data)
        for i in range(loss.id, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            for pid, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg
        for param in self._params.values():
            param.zero_grad()
        for pid, param in self._params.items():
            g = grads[pid] if pid < len(grads) else None
            if g is not None:
                param.grad = param.grad + g.reshape(param.value.shape)


def _check_finite(op: str, x: np.ndarray):
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{op}: non-finite value encountered")


def _same_tape(*vals: Value) -> Tape:
    tape = vals[0].tape
    for v in vals[1:]:
        if v.tape is not tape:
            raise ContractError("values belong to different tapes")
    return tape


# ---------------------------------------------------------------- dense ops


def matmul(a: Value, b: Value) -> Value:
    tape = _same_tape(a, b)
    A, B = a.data, b.data
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {A.shape} by {B.shape}")
    return tape._push("matmul", (a.id, b.id), A @ B, lambda g: (g @ B.T, A.T @ g))


def spmm(s: sp.csr_matrix, b: Value) -> Value:
    """Constant sparse matrix times a dense value."""
    B = b.data
    if s.shape[1] != B.shape[0]:
        raise ShapeError(f"spmm: cannot multiply sparse {s.shape} by {B.shape}")
    return b.tape._push("spmm", (b.id,), np.asarray(s @ B), lambda g: (np.asarray(s.T @ g),))


def add(a: Value, b: Value) -> Value:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return tape._push("add", (a.id, b.id), a.data + b.data, lambda g: (g, g))


def sub(a: Value, b: Value) -> Value:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return tape._push("sub", (a.id, b.id), a.data - b.data, lambda g: (g, -g))


def mul_const(a: Value, c: np.ndarray) -> Value:
    """Elementwise product with a constant array (e.g. a dropout mask)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise ShapeError(f"mul_const: shapes {a.shape} and {c.shape} differ")
    return a.tape._push("mul_const", (a.id,), a.data * c, lambda g: (g * c,))


def relu(a: Value) -> Value:
    mask = a.data > 0
    return a.tape._push("relu", (a.id,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def concat_cols(a: Value, b: Value) -> Value:
    tape = _same_tape(a, b)
    if a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"concat_cols: row counts {a.shape[0]} and {b.shape[0]} differ")
    k = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return tape._push("concat_cols", (a.id, b.id), out, lambda g: (g[:, :k], g[:, k:]))


def scale_by(x: Value, theta: Value) -> Value:
    """``theta * x`` for a scalar value ``theta``; both receive gradients."""
    tape = _same_tape(x, theta)
    if theta.data.size != 1:
        raise ShapeError(f"scale_by: expected a scalar, got shape {theta.shape}")
    X = x.data
    t = theta.data.reshape(())
    tshape = theta.data.shape  # closures hold arrays only; a captured Value would cycle back to the tape

    def back(g):
        return g * t, np.reshape(np.sum(g * X), tshape)

    return tape._push("scale_by", (x.id, theta.id), t * X, back)


def reciprocal(theta: Value) -> Value:
    t = theta.data
    if np.any(t == 0):
        raise DomainError("reciprocal of zero")
    r = 1.0 / t
    return theta.tape._push("reciprocal", (theta.id,), r, lambda g: (-g * r * r,))


def row_log(a: Value) -> Value:
    A = a.data
    bad = np.argwhere(~(A > 0))
    if bad.size:
        i, j = (tuple(bad[0]) + (0,))[:2]
        raise DomainError(f"row_log: non-positive entry at row {i}, col {j}")
    return a.tape._push("row_log", (a.id,), np.log(A), lambda g: (g / A,))


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Numerically stable row softmax on a plain array."""
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(o: Value) -> Value:
    if not np.all(np.isfinite(o.data)):
        raise DomainError("row_softmax: non-finite input")
    y = softmax_rows(o.data)

    def back(g):
        return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return o.tape._push("row_softmax", (o.id,), y, back)


def total(a: Value) -> Value:
    shape = a.shape
    return a.tape._push("sum", (a.id,), np.sum(a.data), lambda g: (np.full(shape, g.item()),))


def sum_squares(a: Value) -> Value:
    A = a.data
    return a.tape._push("sum_squares", (a.id,), np.sum(A * A), lambda g: (2.0 * g.item() * A,))


def scale_const(a: Value, c: float) -> Value:
    return a.tape._push("scale_const", (a.id,), c * a.data, lambda g: (c * g,))


def custom(op: str, parents: Sequence[Value], value: np.ndarray,
           backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Value:
    """Register a primitive with a hand-written adjoint."""
    tape = _same_tape(*parents)
    return tape._push(op, [p.id for p in parents], value, backward)


# ----------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def gradient_check(f: Callable[[Tape], Value], params: Sequence[Parameter],
                   h: float = 1e-5, tol: float = 1e-5, floor: float = 1e-8) -> GradCheckReport:
    """Compare tape gradients with central differences.

    ``f`` must build a fresh program on the tape it is given (watching the
    parameters itself) and return a scalar loss. The error for a parameter is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``.
    """
    tape = Tape()
    tape.backward(f(tape))
    analytic = [p.grad.copy() for p in params]

    def evaluate() -> float:
        return float(f(Tape()).data)

    errors = {}
    for n, (p, ga) in enumerate(zip(params, analytic)):
        gn = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        out = gn.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = evaluate()
            flat[j] = orig - h
            fm = evaluate()
            flat[j] = orig
            out[j] = (fp - fm) / (2 * h)
        scale = max(np.max(np.abs(ga), initial=0.0), np.max(np.abs(gn), initial=0.0), floor)
        errors[p.name or f"param{n}"] = float(np.max(np.abs(ga - gn), initial=0.0) / scale)
    return GradCheckReport(errors, tol)
