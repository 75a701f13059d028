import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rgnn import autodiff as ad
from rgnn.autodiff import ContractError, DomainError, Parameter, ShapeError, Tape, gradient_check

from oracles import central_difference, rel_err


def _grad_of(fn, *arrays):
    """Tape gradients of scalar fn(*values) w.r.t. every array."""
    params = [Parameter(a, name=f"p{i}") for i, a in enumerate(arrays)]
    tape = Tape()
    out = fn(*[tape.watch(p) for p in params])
    tape.backward(out)
    return [p.grad for p in params]


def _value_of(fn, *arrays):
    tape = Tape()
    return float(fn(*[tape.constant(a) for a in arrays]).data)


def test_matmul_identity_and_arithmetic():
    tape = Tape()
    m = np.array([[1.5, -2.0], [0.25, 4.0]])
    assert np.array_equal(ad.matmul(tape.constant(np.eye(2)), tape.constant(m)).data, m)
    out = ad.matmul(tape.constant([[1.0, 2.0], [3.0, 4.0]]), tape.constant([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_reports_both_shapes():
    tape = Tape()
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 3))))


def test_matmul_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    a, b, w = rng.normal(size=(5, 4)), rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    fn = lambda x, y: ad.total(ad.mul_const(ad.matmul(x, y), w))
    ga, gb = _grad_of(fn, a, b)
    assert rel_err(ga, central_difference(lambda x: _value_of(fn, x, b), a)) < 1e-6
    assert rel_err(gb, central_difference(lambda y: _value_of(fn, a, y), b)) < 1e-6


def test_spmm_trivial_cases():
    tape = Tape()
    m = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(ad.spmm(sp.identity(3, format="csr"), tape.constant(m)).data, m)
    perm = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(ad.spmm(perm, tape.constant([[2.0], [5.0]])).data, [[5.0], [2.0]])


def test_spmm_matches_dense_oracle():
    rng = np.random.default_rng(1)
    s = sp.random(20, 20, density=0.1, random_state=2, format="csr")
    b = rng.normal(size=(20, 4))
    out = ad.spmm(s, Tape().constant(b)).data
    assert np.max(np.abs(out - s.toarray() @ b)) < 1e-12


def test_spmm_gradient_uses_transpose():
    rng = np.random.default_rng(3)
    s = sp.random(6, 5, density=0.4, random_state=4, format="csr")
    b, w = rng.normal(size=(5, 2)), rng.normal(size=(6, 2))
    fn = lambda x: ad.total(ad.mul_const(ad.spmm(s, x), w))
    (g,) = _grad_of(fn, b)
    assert np.allclose(g, s.toarray().T @ w, atol=1e-14)
    with pytest.raises(ShapeError):
        ad.spmm(s, Tape().constant(np.ones((6, 2))))


def test_relu_concat_scale():
    tape = Tape()
    assert np.array_equal(ad.relu(tape.constant([[-1.0, 0.0, 2.0]])).data, [[0.0, 0.0, 2.0]])
    left, right = np.ones((3, 2)), np.zeros((3, 1))
    cat = ad.concat_cols(tape.constant(left), tape.constant(right)).data
    assert cat.shape == (3, 3) and np.array_equal(cat[:, :2], left)
    theta = Parameter(2.0, name="theta")
    tape = Tape()
    loss = ad.total(ad.scale_by(tape.constant(3.0), tape.watch(theta)))
    tape.backward(loss)
    assert theta.grad == 3.0


def test_scalar_ops_gradients():
    rng = np.random.default_rng(5)
    x, t = rng.normal(size=(3, 4)), np.array(0.7)
    w = rng.normal(size=(3, 4))

    def fn(xv, tv):
        return ad.total(ad.mul_const(ad.scale_by(xv, ad.reciprocal(tv)), w))

    gx, gt = _grad_of(fn, x, t)
    assert rel_err(gx, central_difference(lambda a: _value_of(fn, a, t), x)) < 1e-6
    assert rel_err(gt, central_difference(lambda a: _value_of(fn, x, a), t)) < 1e-6


def test_row_log_domain_error_names_entry():
    with pytest.raises(DomainError, match="row 1, col 0"):
        ad.row_log(Tape().constant([[1.0, 2.0], [0.0, 1.0]]))
    x = np.array([[0.5, 2.0]])
    (g,) = _grad_of(lambda v: ad.total(ad.row_log(v)), x)
    assert np.allclose(g, 1.0 / x)


def test_row_softmax_examples():
    tape = Tape()
    out = ad.row_softmax(tape.constant([[0.0, 0.0, 0.0], np.log([1.0, 2.0, 3.0])])).data
    assert np.allclose(out[0], 1 / 3, atol=1e-15)
    assert np.allclose(out[1], [1 / 6, 2 / 6, 3 / 6], atol=1e-15)
    big = ad.row_softmax(tape.constant([[1000.0, 1000.0]])).data
    assert np.array_equal(big, [[0.5, 0.5]])


def test_row_softmax_gradient():
    rng = np.random.default_rng(6)
    o, w = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    fn = lambda v: ad.total(ad.mul_const(ad.row_softmax(v), w))
    (g,) = _grad_of(fn, o)
    assert rel_err(g, central_difference(lambda a: _value_of(fn, a), o)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_row_softmax_rows_are_distributions(z):
    y = ad.row_softmax(Tape().constant(z)).data
    assert np.all(np.abs(y.sum(axis=1) - 1) < 1e-12)
    assert np.all((y > 0) & (y <= 1))


def test_non_finite_values_are_rejected():
    with pytest.raises(DomainError):
        ad.row_softmax(Tape().constant([[np.nan, 1.0]]))


def test_backward_examples():
    w = Parameter(np.array([[1.0, -2.0], [3.0, 0.5]]), name="W")
    unused = Parameter(np.ones(3), name="U")
    tape = Tape()
    tape.watch(unused)
    loss = ad.total(tape.watch(w))
    tape.backward(loss)
    assert np.array_equal(w.grad, np.ones((2, 2)))
    assert np.array_equal(unused.grad, np.zeros(3))
    with pytest.raises(ContractError):
        tape.backward(tape.watch(w))


def test_repeated_watch_accumulates():
    w = Parameter(np.array(2.0), name="w")
    tape = Tape()
    loss = ad.add(ad.scale_by(tape.constant(3.0), tape.watch(w)), ad.scale_by(tape.constant(4.0), tape.watch(w)))
    tape.backward(loss)
    assert w.grad == 7.0


def test_backward_zero_initializes_per_call():
    w = Parameter(np.array(1.5), name="w")
    for _ in range(2):
        tape = Tape()
        tape.backward(ad.sum_squares(tape.watch(w)))
        assert w.grad == 3.0


def test_parents_precede_children():
    tape = Tape()
    a = tape.constant(np.ones((2, 2)))
    b = ad.relu(ad.matmul(a, a))
    ad.add(a, b)
    assert all(p < i for i, node in enumerate(tape.nodes) for p in node.parents)


def test_gradient_check_examples():
    w = Parameter(3.0, name="w")
    report = gradient_check(lambda t: ad.sum_squares(t.watch(w)), [w])
    assert report.passed and report.errors["w"] < 1e-8
    c = Parameter(np.ones(2), name="c")

    def constant_loss(t):
        t.watch(c)
        return ad.total(t.constant(np.ones(2)))

    report = gradient_check(constant_loss, [c])
    assert report.errors["c"] == 0.0 and np.array_equal(c.grad, np.zeros(2))


def test_parameter_requires_positive_lr():
    with pytest.raises(ContractError):
        Parameter(1.0, lr=0.0)


def test_replay_is_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(42)
        tape = Tape()
        x = tape.constant(rng.normal(size=(7, 3)))
        w = tape.constant(rng.normal(size=(3, 3)))
        return ad.row_softmax(ad.relu(ad.matmul(x, w))).data

    assert np.array_equal(run(), run())


def test_tapes_are_freed_without_cycle_collection():
    import gc
    import weakref

    theta = Parameter(np.array(2.0), name="theta")
    tape = Tape()
    x = tape.constant(np.ones((3, 2)))
    out = ad.total(ad.row_softmax(ad.scale_by(x, ad.reciprocal(tape.watch(theta)))))
    tape.backward(out)
    ref = weakref.ref(tape)
    gc.disable()
    try:
        del tape, x, out
        assert ref() is None
    finally:
        gc.enable()
