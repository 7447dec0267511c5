import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lieaug import numkern as nk
from lieaug.model import MlpSpec, init_mlp, mlp_forward
from lieaug.numkern import ContractError, ParamStore, ShapeError, Tape


def store(**arrays):
    s = ParamStore()
    for k, v in arrays.items():
        s.add(k, v)
    return s


def test_matmul_values():
    t = Tape()
    a = t.constant([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nk.matmul(t.constant(np.eye(2)), a).value, a.value)
    np.testing.assert_array_equal(nk.matmul(a, t.constant([[0.0], [1.0]])).value, [[2.0], [4.0]])


def test_matmul_shape_error():
    t = Tape()
    with pytest.raises(ShapeError):
        nk.matmul(t.constant(np.ones((2, 3))), t.constant(np.ones((2, 3))))


def test_matmul_backward_fd(rng):
    s = store(a=rng.standard_normal((3, 4)), b=rng.standard_normal((4, 5)))
    assert nk.gradcheck(lambda t, n: nk.sum(nk.matmul(n["a"], n["b"])), s) <= 1e-7


@pytest.mark.parametrize(
    "u,v,expected",
    [((1, 2, 3), (1, 2, 3), 1.0), ((1, 0), (0, 1), 0.0), ((1, 1), (-1, -1), -1.0)],
)
def test_cosine_similarity_values(u, v, expected):
    t = Tape()
    got = nk.cosine_similarity(t.constant(u), t.constant(v)).value
    assert got == pytest.approx(expected, abs=1e-15)


def test_cosine_zero_vectors_give_zero_and_no_gradient():
    s = store(u=np.zeros(3), v=np.zeros(3))
    t = Tape()
    n = t.params(s)
    out = nk.cosine_similarity(n["u"], n["v"])
    assert float(out.value) == 0.0
    grads = t.backward(out)
    assert not np.any(grads["u"]) and not np.any(grads["v"])


def test_backward_quadratic():
    t = Tape()
    th = t.param("theta", [1.0, -2.0])
    g = t.backward(nk.sum(nk.square(th)))
    np.testing.assert_array_equal(g["theta"], [2.0, -4.0])


def test_backward_relu_subgradient():
    t = Tape()
    th = t.param("theta", [-1.0, 3.0])
    np.testing.assert_array_equal(t.backward(nk.sum(nk.relu(th)))["theta"], [0.0, 1.0])
    t = Tape()
    th = t.param("theta", [0.0])
    assert t.backward(nk.sum(nk.relu(th)))["theta"][0] == 0.0


def test_backward_needs_scalar():
    t = Tape()
    th = t.param("theta", [1.0, 2.0])
    with pytest.raises(ContractError):
        t.backward(nk.square(th))


def test_backward_twice_identical(rng):
    t = Tape()
    a = t.param("a", rng.standard_normal((3, 3)))
    loss = nk.sum(nk.tanh(nk.matmul(a, a)))
    g1 = t.backward(loss)["a"]
    g2 = t.backward(loss)["a"]
    np.testing.assert_array_equal(g1, g2)


def test_mlp_gradcheck(rng):
    spec = MlpSpec(6, 3, (8, 8, 8), "relu")
    params = init_mlp(spec, rng)
    x = rng.standard_normal((5, 6))
    err = nk.gradcheck(lambda t, n: nk.sum(nk.square(mlp_forward(n, t.constant(x), spec))), params)
    assert err <= 1e-6


def _cases():
    def mse(t, n):
        return nk.mean(nk.sum(nk.square(nk.sub(n["a"], n["b"])), axis=1))

    return {
        "matmul": lambda t, n: nk.sum(nk.tanh(nk.matmul(n["a"], n["b"]))),
        "add": lambda t, n: nk.sum(nk.square(nk.add(n["a"], n["b"]))),
        "relu": lambda t, n: nk.sum(nk.mul(nk.relu(n["a"]), n["b"])),
        "tanh": lambda t, n: nk.sum(nk.mul(nk.tanh(n["a"]), n["b"])),
        "smooth_l1": lambda t, n: nk.sum(nk.smooth_abs(nk.sub(n["a"], n["b"]))),
        "mse": mse,
        "cosine": lambda t, n: nk.cosine_similarity(n["a"], n["b"]),
    }


@pytest.mark.parametrize("name", sorted(_cases()))
def test_primitive_gradients_100_instances(name):
    build = _cases()[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    worst = 0.0
    for _ in range(100):
        a = rng.standard_normal((3, 3))
        if name == "relu":
            a = np.where(np.abs(a) < 1e-3, 0.5, a)
        worst = max(worst, nk.gradcheck(build, store(a=a, b=rng.standard_normal((3, 3)))))
    assert worst <= 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 7, elements=st.floats(-1e6, 1e6)))
def test_smooth_abs_within_tau(z):
    t = Tape()
    v = nk.smooth_abs(t.constant(z)).value
    assert np.all(v - np.abs(z) <= nk.SMOOTH_TAU * (1 + 1e-12))
    assert np.all(v >= np.abs(z))


def test_paramstore_flat_roundtrip(rng):
    s = store(a=rng.standard_normal((2, 3)), b=rng.standard_normal(4))
    flat = s.flat()
    assert flat.size == s.size() == 10
    s2 = s.copy()
    s2.set_flat(flat * 2)
    np.testing.assert_array_equal(s2["a"], 2 * s["a"])
    with pytest.raises(ShapeError):
        s["a"] = np.zeros(3)


def test_constant_subgraph_skips_backward():
    calls = []
    t = Tape()
    c = t.constant([1.0, 2.0])
    spy = t.custom(c.value * 2, (c,), lambda g: calls.append(1) or (g * 2,))
    p = t.param("p", [1.0, 1.0])
    t.backward(nk.sum(nk.mul(spy, p)))
    assert calls == []
