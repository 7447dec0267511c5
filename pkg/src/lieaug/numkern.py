"""Dense float64 tensors with a small reverse-mode autodiff tape.

Values are plain ``numpy.ndarray`` objects. A :class:`Tape` records every
operation as a :class:`Node` holding the forward value, its parent nodes and a
vector-Jacobian product closure. :meth:`Tape.backward` walks the record in
reverse and returns gradients for the parameter leaves.

Only the operations needed by MLPs, the training losses and the matrix
exponential are provided. Broadcasting is limited to adding a bias row over
the batch dimension.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

# Smoothing width for every |.| appearing inside a loss.
SMOOTH_TAU = 1e-8


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64, order="C")


class Node:
    __slots__ = ("tape", "index", "value", "parents", "vjp", "param", "needs_grad")

    def __init__(self, tape, value, parents=(), vjp=None, param=None):
        self.tape = tape
        self.value = value
        self.parents = tuple(parents)
        self.param = param
        # constant subgraphs never run their backward rule
        self.needs_grad = param is not None or any(p.needs_grad for p in self.parents)
        self.vjp = vjp if self.needs_grad else None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(tape, x) -> Node:
    if isinstance(x, Node):
        return x
    return tape.constant(x)


class Tape:
    """Ordered record of operations; single-threaded by design."""

    def __init__(self):
        self.nodes: list[Node] = []

    def constant(self, value) -> Node:
        return Node(self, as_tensor(value))

    def param(self, name: str, value) -> Node:
        return Node(self, as_tensor(value), param=name)

    def params(self, store: "ParamStore", names: Iterable[str] | None = None) -> dict[str, Node]:
        names = store.names() if names is None else names
        return {n: self.param(n, store[n]) for n in names}

    def custom(self, value, parents: Sequence[Node], vjp: Callable) -> Node:
        """Register a node with a user supplied backward rule.

        ``vjp(grad)`` must return one gradient (or ``None``) per parent.
        """
        return Node(self, as_tensor(value), parents, vjp)

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        if loss.tape is not self:
            raise ContractError("loss node belongs to another tape")
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        out: dict[str, np.ndarray] = {}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            if node.param is not None:
                prev = out.get(node.param)
                out[node.param] = g if prev is None else prev + g
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.needs_grad:
                    continue
                if pg.shape != parent.value.shape:
                    raise ShapeError(
                        f"gradient shape {pg.shape} does not match value shape {parent.value.shape}"
                    )
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg
        return out


# ---------------------------------------------------------------------------
# primitives


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ContractError("at least one operand must be a tape node")


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return tape.custom(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return tape.custom(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    return tape.custom(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Node, c: float) -> Node:
    return a.tape.custom(a.value * c, (a,), lambda g: (g * c,))


def add_bias(x: Node, b: Node) -> Node:
    """x[batch, k] + b[k]."""
    if x.value.ndim != 2 or b.value.shape != (x.value.shape[1],):
        raise ShapeError(f"add_bias: cannot add bias {b.shape} to {x.shape}")
    return x.tape.custom(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0)))


def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} x {bv.shape}")
    return tape.custom(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def relu(x: Node) -> Node:
    on = x.value > 0
    return x.tape.custom(np.where(on, x.value, 0.0), (x,), lambda g: (g * on,))


def tanh(x: Node) -> Node:
    t = np.tanh(x.value)
    return x.tape.custom(t, (x,), lambda g: (g * (1.0 - t * t),))


def square(x: Node) -> Node:
    v = x.value
    return x.tape.custom(v * v, (x,), lambda g: (2.0 * v * g,))


def smooth_abs(x: Node, tau: float = SMOOTH_TAU) -> Node:
    """sqrt(x^2 + tau^2); within tau of |x| everywhere."""
    v = x.value
    r = np.sqrt(v * v + tau * tau)
    return x.tape.custom(r, (x,), lambda g: (g * v / r,))


def sum(x: Node, axis: int | None = None) -> Node:  # noqa: A001
    shape = x.value.shape
    if axis is None:
        return x.tape.custom(np.sum(x.value), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % len(shape)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return x.tape.custom(np.sum(x.value, axis=ax), (x,), vjp)


def mean(x: Node, axis: int | None = None) -> Node:
    n = x.value.size if axis is None else x.value.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


def reshape(x: Node, shape) -> Node:
    old = x.value.shape
    return x.tape.custom(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_rows(parts: Sequence[Node]) -> Node:
    tape = _tape_of(*parts)
    parts = [_lift(tape, p) for p in parts]
    sizes = np.cumsum([p.value.shape[0] for p in parts])[:-1]
    return tape.custom(
        np.concatenate([p.value for p in parts], axis=0),
        parts,
        lambda g: tuple(np.split(g, sizes, axis=0)),
    )


def slice_rows(x: Node, start: int, stop: int) -> Node:
    shape = x.value.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return x.tape.custom(x.value[start:stop], (x,), vjp)


def dot_rows(u: Node, v: Node) -> Node:
    """Row-wise inner products of two [batch, k] nodes."""
    if u.shape != v.shape:
        raise ShapeError(f"dot_rows: shapes {u.shape} and {v.shape} differ")
    uv, vv = u.value, v.value
    return u.tape.custom(
        np.einsum("bk,bk->b", uv, vv), (u, v), lambda g: (g[:, None] * vv, g[:, None] * uv)
    )


def _cosine_rows_value(u: np.ndarray, v: np.ndarray):
    nu = np.sqrt(np.einsum("bk,bk->b", u, u))
    nv = np.sqrt(np.einsum("bk,bk->b", v, v))
    dot = np.einsum("bk,bk->b", u, v)
    denom = nu * nv
    ok = denom > 0
    safe = np.where(ok, denom, 1.0)
    cos = np.where(ok, dot / safe, 0.0)
    return cos, nu, nv, safe, ok


def cosine_rows(u: Node, v: Node) -> Node:
    """Row-wise cosine similarity; a row with a zero vector yields 0 and no gradient."""
    tape = _tape_of(u, v)
    u, v = _lift(tape, u), _lift(tape, v)
    if u.shape != v.shape or u.value.ndim != 2:
        raise ShapeError(f"cosine_rows: shapes {u.shape} and {v.shape}")
    uv, vv = u.value, v.value
    cos, nu, nv, safe, ok = _cosine_rows_value(uv, vv)
    nu2 = np.where(ok, nu * nu, 1.0)
    nv2 = np.where(ok, nv * nv, 1.0)

    def vjp(g):
        gg = np.where(ok, g, 0.0)[:, None]
        gu = gg * (vv / safe[:, None] - cos[:, None] * uv / nu2[:, None])
        gv = gg * (uv / safe[:, None] - cos[:, None] * vv / nv2[:, None])
        return gu, gv

    return tape.custom(cos, (u, v), vjp)


def cosine_similarity(u: Node, v: Node) -> Node:
    """Cosine similarity of two tensors viewed as flat vectors (scalar node)."""
    tape = _tape_of(u, v)
    u, v = _lift(tape, u), _lift(tape, v)
    if u.value.size != v.value.size:
        raise ShapeError(f"cosine_similarity: sizes {u.value.size} and {v.value.size} differ")
    return reshape(cosine_rows(reshape(u, (1, -1)), reshape(v, (1, -1))), ())


def cosine_similarity_value(u, v) -> float:
    u = as_tensor(u).reshape(1, -1)
    v = as_tensor(v).reshape(1, -1)
    if u.size != v.size:
        raise ShapeError(f"cosine_similarity: sizes {u.size} and {v.size} differ")
    return float(_cosine_rows_value(u, v)[0][0])


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ParamStore:
    """Named float64 parameter arrays with a flat view for the optimizer."""

    values: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: dict[str, bool] = field(default_factory=dict)

    def add(self, name: str, value, trainable: bool = True) -> None:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already registered")
        self.values[name] = as_tensor(value).copy()
        self.trainable[name] = trainable

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __setitem__(self, name: str, value) -> None:
        value = as_tensor(value)
        if value.shape != self.values[name].shape:
            raise ShapeError(f"{name}: shape {value.shape} != {self.values[name].shape}")
        self.values[name] = value.copy()

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self, trainable_only: bool = False) -> list[str]:
        return [n for n in self.values if self.trainable[n] or not trainable_only]

    def size(self) -> int:
        return int(np.sum([v.size for v in self.values.values()], dtype=np.int64))

    def flat(self) -> np.ndarray:
        if not self.values:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.values.values()])

    def set_flat(self, flat) -> None:
        flat = as_tensor(flat)
        if flat.size != self.size():
            raise ShapeError(f"flat view has {flat.size} entries, expected {self.size()}")
        offset = 0
        for name, v in self.values.items():
            self.values[name] = flat[offset : offset + v.size].reshape(v.shape).copy()
            offset += v.size

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.values.items()}, dict(self.trainable))


# ---------------------------------------------------------------------------
# finite-difference checking


def numeric_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of an array."""
    x = as_tensor(x).copy()
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs deviation scaled by the larger gradient's max magnitude."""
    scale_ = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale_)


def gradcheck(
    build: Callable[[Tape, dict[str, Node]], Node],
    store: ParamStore,
    h: float = 1e-5,
) -> float:
    """Compare tape gradients of ``build`` with central differences.

    ``build(tape, nodes)`` must return the scalar loss node. Returns the
    worst relative error over all trainable parameters.
    """
    tape = Tape()
    nodes = tape.params(store, store.names(trainable_only=True))
    for n in store.names():
        if n not in nodes:
            nodes[n] = tape.constant(store[n])
    grads = tape.backward(build(tape, nodes))

    worst = 0.0
    for name in store.names(trainable_only=True):

        def f(val, name=name):
            t = Tape()
            ns = {n: t.constant(val if n == name else store[n]) for n in store.names()}
            return float(build(t, ns).value)

        num = numeric_grad(f, store[name], h)
        ana = grads.get(name, np.zeros_like(store[name]))
        worst = max(worst, relative_error(ana, num))
    return worst
