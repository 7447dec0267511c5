"""Symmetry-agnostic MLP predictor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import numkern as nk
from .numkern import ParamStore, ShapeError


@dataclass(frozen=True)
class MlpSpec:
    n_in: int
    n_out: int
    hidden: tuple[int, ...] = field(default=(128, 128, 128))
    activation: Literal["relu", "tanh"] = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise ShapeError("an MLP needs at least one hidden layer")
        if min(self.hidden) <= 0 or self.n_in <= 0 or self.n_out <= 0:
            raise ShapeError(f"layer widths must be positive: {self}")
        if self.activation not in ("relu", "tanh"):
            raise ShapeError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> list[int]:
        return [self.n_in, *self.hidden, self.n_out]

    def param_names(self) -> list[str]:
        return [f"mlp.{kind}{i}" for i in range(len(self.widths) - 1) for kind in ("W", "b")]


def init_mlp(spec: MlpSpec, rng: np.random.Generator, store: ParamStore | None = None) -> ParamStore:
    """Uniform fan-in init (He bound for relu, Glorot-style bound for tanh); zero biases."""
    store = ParamStore() if store is None else store
    gain = 6.0 if spec.activation == "relu" else 3.0
    w = spec.widths
    for i in range(len(w) - 1):
        bound = np.sqrt(gain / w[i])
        store.add(f"mlp.W{i}", rng.uniform(-bound, bound, size=(w[i], w[i + 1])))
        store.add(f"mlp.b{i}", np.zeros(w[i + 1]))
    return store


def mlp_forward(params: dict, x: nk.Node, spec: MlpSpec) -> nk.Node:
    """Affine + activation stack with an affine output layer; ``params`` maps names to nodes."""
    if x.value.ndim != 2 or x.value.shape[1] != spec.n_in:
        raise ShapeError(f"expected input [batch, {spec.n_in}], got {x.value.shape}")
    act = nk.relu if spec.activation == "relu" else nk.tanh
    h = x
    last = len(spec.widths) - 2
    for i in range(last + 1):
        h = nk.add_bias(nk.matmul(h, params[f"mlp.W{i}"]), params[f"mlp.b{i}"])
        if i < last:
            h = act(h)
    return h


def mlp_predict(store: ParamStore, x, spec: MlpSpec) -> np.ndarray:
    """Forward pass on arrays; same operations and order as :func:`mlp_forward`, no tape."""
    x = nk.as_tensor(x)
    single = x.ndim == 1
    h = x[None] if single else x
    if h.shape[1] != spec.n_in:
        raise ShapeError(f"expected input [batch, {spec.n_in}], got {h.shape}")
    last = len(spec.widths) - 2
    for i in range(last + 1):
        h = h @ store[f"mlp.W{i}"] + store[f"mlp.b{i}"]
        if i < last:
            h = np.where(h > 0, h, 0.0) if spec.activation == "relu" else np.tanh(h)
    return h[0] if single else h
