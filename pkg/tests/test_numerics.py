import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motioncap import numerics as nx
from motioncap.numerics import DimensionError, DomainError, EvaluationError, Tape, Tensor, grad_check


def param(x, name="x"):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, name=name)


def test_matmul_identity():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nx.matmul(np.eye(2), b).data, b)


def test_matmul_hand():
    assert nx.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_gradient():
    rng = np.random.default_rng(0)
    a, b = param(rng.normal(size=(3, 4)), "a"), param(rng.normal(size=(4, 2)), "b")
    rep = grad_check(lambda: nx.tsum(nx.square(nx.matmul(a, b))), {"a": a, "b": b}, step=1e-5, tol=1e-6)
    assert rep.passed, rep.lines()


def test_batched_matmul_gradient():
    rng = np.random.default_rng(1)
    a, b = param(rng.normal(size=(2, 3, 4)), "a"), param(rng.normal(size=(4, 5)), "b")
    c = param(rng.normal(size=(2, 5, 3)), "c")
    rep = grad_check(lambda: nx.tsum(nx.tanh(nx.matmul(nx.matmul(a, b), c))), {"a": a, "b": b, "c": c}, tol=1e-6)
    assert rep.passed, rep.lines()


def test_elementwise_values():
    assert nx.sigmoid(0.0).data == 0.5
    assert nx.tanh(0.0).data == 0.0
    assert nx.elementwise("sigmoid", 0.0).data == 0.5
    assert nx.elementwise("add", 1.0, 2.0).data == 3.0


def test_sigmoid_derivative():
    x = param([1.0])
    rep = grad_check(lambda: nx.tsum(nx.sigmoid(x)), {"x": x}, tol=1e-6)
    assert rep.passed
    s = 1 / (1 + np.exp(-1.0))
    with Tape() as tape:
        y = nx.tsum(nx.sigmoid(x))
    x.grad = None
    tape.backward(y)
    assert x.grad[0] == pytest.approx(s * (1 - s), rel=1e-12)


def test_log_domain_error():
    with pytest.raises(DomainError):
        nx.log(np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        nx.log(-1.0)


def test_softmax_examples():
    assert np.allclose(nx.softmax(np.zeros(3)).data, 1 / 3, atol=1e-15)
    assert np.allclose(nx.softmax(np.array([1000.0, 1000.0])).data, [0.5, 0.5])
    assert np.allclose(nx.softmax(np.array([1.0, 2.0, 3.0])).data, [0.0900, 0.2447, 0.6652], atol=1e-4)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-50, 50)), st.integers(0, 1))
def test_softmax_is_distribution(x, axis):
    p = nx.softmax(x, axis=axis).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=axis), 1.0, atol=1e-12)


UNARY = {
    "tanh": nx.tanh,
    "sigmoid": nx.sigmoid,
    "exp": nx.exp,
    "neg": nx.neg,
    "square": nx.square,
    "log": lambda t: nx.log(nx.square(t) + 0.5),
    "sqrt": lambda t: nx.sqrt(nx.square(t) + 0.5),
    "softmax": lambda t: nx.softmax(t, axis=-1),
    "mean": lambda t: nx.mean(t, axis=0, keepdims=True),
    "transpose": lambda t: nx.transpose(t),
    "reshape": lambda t: nx.reshape(t, (-1,)),
    "getitem": lambda t: nx.getitem(t, (slice(None), [0, 0, 2])),
    "maximum": lambda t: nx.maximum(t, 0.3),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=15, deadline=None)
@given(x=arrays(np.float64, (3, 4), elements=st.floats(-2, 2)))
def test_primitive_gradients(name, x):
    if name == "maximum":
        # keep probes away from the kink
        x = np.where(np.abs(x - 0.3) < 1e-3, x + 0.01, x)
    p = param(x)
    w = np.linspace(-1, 1, UNARY[name](Tensor(x)).data.size).reshape(UNARY[name](Tensor(x)).shape)
    rep = grad_check(lambda: nx.tsum(UNARY[name](p) * w), {"x": p}, step=1e-6, tol=1e-5, floor=1e-4)
    assert rep.passed, rep.lines()


@settings(max_examples=15, deadline=None)
@given(a=arrays(np.float64, (3, 4), elements=st.floats(-2, 2)), b=arrays(np.float64, (4,), elements=st.floats(0.5, 2)))
def test_binary_gradients_with_broadcast(a, b):
    pa, pb = param(a, "a"), param(b, "b")
    rep = grad_check(
        lambda: nx.tsum(nx.tanh(pa * pb + pa / pb - pb)) + nx.tsum(nx.square(nx.concat([pa, nx.reshape(pb, (1, 4))], axis=0))),
        {"a": pa, "b": pb},
        tol=1e-5,
        floor=1e-4,
    )
    assert rep.passed, rep.lines()


def test_embedding_and_pick_gradients():
    rng = np.random.default_rng(3)
    table = param(rng.normal(size=(5, 3)), "E")
    ids = np.array([0, 2, 2, 4])
    rep = grad_check(lambda: nx.tsum(nx.square(nx.embedding(table, ids))), {"E": table}, tol=1e-6)
    assert rep.passed
    probs = param(rng.uniform(0.1, 1, size=(4, 5)), "p")
    rep = grad_check(lambda: nx.tsum(nx.log(nx.pick(probs, ids))), {"p": probs}, tol=1e-6)
    assert rep.passed
    with pytest.raises(IndexError):
        nx.embedding(table, np.array([5]))


def test_shared_tensor_accumulates():
    x = param([2.0])
    with Tape() as tape:
        y = nx.tsum(x * x + x)
    tape.backward(y)
    assert x.grad[0] == pytest.approx(5.0)


def test_grad_check_sum_of_squares():
    x = param([1.0, 2.0])
    rep = grad_check(lambda: nx.tsum(nx.square(x)), {"x": x}, tol=1e-8)
    assert rep.passed and rep.errors["x"] < 1e-8


def test_grad_check_catches_corrupted_adjoint():
    x = param([0.3, -0.7], "weights")

    def bad_square(t):
        return nx.record_op(t.data**2, (t,), lambda g: (3.0 * g * t.data,))

    rep = grad_check(lambda: nx.tsum(bad_square(x)), {"weights": x}, tol=1e-4)
    assert not rep.passed
    assert rep.failures == ["weights"]


def test_grad_check_non_finite():
    x = param([1.0])
    with pytest.raises(EvaluationError):
        grad_check(lambda: nx.tsum(x * np.inf), {"x": x})


def test_forward_replay_deterministic():
    def run():
        rng = np.random.default_rng(42)
        a = Tensor(rng.normal(size=(4, 4)))
        return nx.softmax(nx.matmul(nx.tanh(a), a), axis=-1).data

    assert np.array_equal(run(), run())


def test_checkpoint_roundtrip(tmp_path):
    params = {"w": Tensor(np.arange(6.0).reshape(2, 3)), "b": np.array([1.5, -2.0])}
    nx.save_checkpoint(tmp_path, params, {"note": "x"})
    arrays, meta = nx.load_checkpoint(tmp_path)
    assert meta == {"note": "x"}
    assert np.array_equal(arrays["w"], params["w"].data)
    assert np.array_equal(arrays["b"], params["b"])
    assert (tmp_path / "params.bin").stat().st_size == 8 * 8
