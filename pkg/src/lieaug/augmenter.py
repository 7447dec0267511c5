"""Learnable Lie-algebra augmentation: generator basis, sampling and group actions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import matexp
from .numkern import Node, ShapeError, as_tensor


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# generator basis


@dataclass
class GeneratorBasis:
    generators: np.ndarray  # (C, d, d)
    mask: np.ndarray  # (d, d) bool, shared by all generators
    init_value: float = 1e-2
    d_norm: float | None = None  # target squared Frobenius norm; defaults to d
    collapsed: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.generators = as_tensor(self.generators)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.generators.ndim != 3 or self.generators.shape[1:] != self.mask.shape:
            raise ShapeError(
                f"generators {self.generators.shape} incompatible with mask {self.mask.shape}"
            )
        if self.d_norm is None:
            self.d_norm = float(self.d)

    @property
    def C(self) -> int:
        return self.generators.shape[0]

    @property
    def d(self) -> int:
        return self.generators.shape[1]

    def copy(self) -> "GeneratorBasis":
        return GeneratorBasis(
            self.generators.copy(), self.mask.copy(), self.init_value, self.d_norm, list(self.collapsed)
        )


def full_mask(d: int) -> np.ndarray:
    return np.ones((d, d), dtype=bool)


def init_basis(C: int, d: int, mask=None, init_value: float = 1e-2, d_norm: float | None = None) -> GeneratorBasis:
    if C <= 0 or d <= 0:
        raise ConfigError(f"need C >= 1 and d >= 1, got C={C}, d={d}")
    mask = full_mask(d) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (d, d):
        raise ConfigError(f"mask shape {mask.shape} != ({d}, {d})")
    gens = np.where(mask, float(init_value), 0.0)[None].repeat(C, axis=0)
    return GeneratorBasis(gens, mask, init_value, d_norm)


def normalize_generators(gens: np.ndarray, d_norm: float) -> tuple[np.ndarray, list[int]]:
    """Rescale each generator to Frobenius norm sqrt(d_norm); zero ones are left alone."""
    gens = as_tensor(gens)
    norms = np.sqrt(np.einsum("cij,cij->c", gens, gens))
    collapsed = [int(i) for i in np.flatnonzero(~(norms > 0))]
    factor = np.where(norms > 0, np.sqrt(d_norm) / np.where(norms > 0, norms, 1.0), 1.0)
    return gens * factor[:, None, None], collapsed


def normalize_basis(basis: GeneratorBasis) -> GeneratorBasis:
    out = basis.copy()
    out.generators, collapsed = normalize_generators(np.where(basis.mask, basis.generators, 0.0), basis.d_norm)
    out.collapsed = sorted(set(basis.collapsed) | set(collapsed))
    return out


# Two-body state layout per timestep: (q1x, q1y, p1x, p1y, q2x, q2y, p2x, p2y).
TWO_BODY_POSITIONS = (0, 1, 4, 5)
TWO_BODY_MOMENTA = (2, 3, 6, 7)


def two_body_mask(name: str) -> np.ndarray:
    """Mask_0: everything; Mask_2: 2x2 diagonal blocks; Mask_4: position-position and momentum-momentum."""
    name = name.lower().replace("mask_", "").replace("mask", "")
    m = np.zeros((8, 8), dtype=bool)
    if name == "0":
        m[:] = True
    elif name == "2":
        for b in range(4):
            m[2 * b : 2 * b + 2, 2 * b : 2 * b + 2] = True
    elif name == "4":
        for group in (TWO_BODY_POSITIONS, TWO_BODY_MOMENTA):
            m[np.ix_(group, group)] = True
    else:
        raise ConfigError(f"unknown two-body mask {name!r}; expected mask_0, mask_2 or mask_4")
    return m


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SamplerConfig:
    gamma: float
    kind: Literal["continuous", "integer"] = "continuous"

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be finite and positive, got {self.gamma}")
        if self.kind not in ("continuous", "integer"):
            raise ConfigError(f"unknown sampler kind {self.kind!r}")


def sample_coefficients(sampler: SamplerConfig, n: int, C: int, rng: np.random.Generator) -> np.ndarray:
    if sampler.kind == "integer":
        k = int(np.floor(sampler.gamma))
        return rng.integers(-k, k + 1, size=(n, C)).astype(np.float64)
    return rng.uniform(-sampler.gamma, sampler.gamma, size=(n, C))


@dataclass
class GroupSample:
    w: np.ndarray  # (C,) or (S, C)
    g: np.ndarray  # (d, d) or (S, d, d)
    g_inv: np.ndarray


def lie_element(generators: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.tensordot(as_tensor(w), as_tensor(generators), axes=([-1], [0]))


def group_sample(generators: np.ndarray, w) -> GroupSample:
    """Group elements for given coefficients; works for one w or a stack."""
    A = lie_element(generators, w)
    return GroupSample(as_tensor(w), matexp.expm(A), matexp.expm(-A))


def sample_group(basis: GeneratorBasis, sampler: SamplerConfig, rng: np.random.Generator, n: int | None = None) -> GroupSample:
    """Draw one group element (``n=None``) or a stack of ``n`` elements."""
    w = sample_coefficients(sampler, 1 if n is None else n, basis.C, rng)
    if n is None:
        w = w[0]
    return group_sample(np.where(basis.mask, basis.generators, 0.0), w)


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class ActionSpec:
    d: int
    timesteps: int = 1
    output_action: Literal["invariant", "equivariant"] = "invariant"
    timesteps_out: int | None = None

    @property
    def n(self) -> int:
        return self.timesteps * self.d

    @property
    def equivariant(self) -> bool:
        return self.output_action == "equivariant"


def block_apply(g: np.ndarray, x: np.ndarray, d: int) -> np.ndarray:
    """Apply g to every contiguous d-block of x. g is (d,d) or (B,d,d); x is (n,) or (B,n)."""
    x = as_tensor(x)
    if x.shape[-1] % d:
        raise ShapeError(f"length {x.shape[-1]} is not a multiple of d={d}")
    xb = x.reshape(x.shape[:-1] + (x.shape[-1] // d, d))
    out = np.einsum("...ij,...tj->...ti", g, xb)
    return out.reshape(np.broadcast_shapes(out.shape[:-2], x.shape[:-1]) + (x.shape[-1],))


def act_input(sample: GroupSample, x, spec: ActionSpec) -> np.ndarray:
    return block_apply(sample.g, x, spec.d)


def act_output(sample: GroupSample, y, spec: ActionSpec) -> np.ndarray:
    if not spec.equivariant:
        return as_tensor(y)
    return block_apply(sample.g, y, spec.d)


def inverse_act_output(sample: GroupSample, yhat, spec: ActionSpec) -> np.ndarray:
    if not spec.equivariant:
        return as_tensor(yhat)
    return block_apply(sample.g_inv, yhat, spec.d)


# ---------------------------------------------------------------------------
# tape nodes


def lie_element_node(w: np.ndarray, gens: Node) -> Node:
    """A[s] = sum_c w[s, c] L[c] with w held constant (reparameterised draw)."""
    w = as_tensor(w)
    return gens.tape.custom(
        np.tensordot(w, gens.value, axes=([1], [0])),
        (gens,),
        lambda g: (np.tensordot(w, g, axes=([0], [0])),),
    )


def masked_node(gens: Node, mask: np.ndarray) -> Node:
    m = np.asarray(mask, dtype=np.float64)
    return gens.tape.custom(gens.value * m, (gens,), lambda g: (g * m,))


def normalize_node(gens: Node, d_norm: float) -> Node:
    """Differentiable rescale of every generator to Frobenius norm sqrt(d_norm)."""
    V = gens.value
    n = np.sqrt(np.einsum("cij,cij->c", V, V))
    if np.any(~(n > 0)):
        raise ShapeError("cannot normalise a zero generator")
    s = np.sqrt(d_norm) / n
    L = V * s[:, None, None]

    def vjp(g):
        radial = np.einsum("cij,cij->c", g, V) / (n * n)
        return ((g - radial[:, None, None] * V) * s[:, None, None],)

    return gens.tape.custom(L, (gens,), vjp)


def block_apply_node(g: Node, x, d: int) -> Node:
    """Batched block action: g is (S,d,d), x is (S,n) node or array."""
    tape = g.tape
    x = x if isinstance(x, Node) else tape.constant(x)
    S, n = x.value.shape
    if n % d or g.value.shape != (S, d, d):
        raise ShapeError(f"block action: g {g.value.shape} and x {x.value.shape} with d={d}")
    gv = g.value
    xb = x.value.reshape(S, n // d, d)

    def vjp(grad):
        gb = grad.reshape(S, n // d, d)
        gx = np.einsum("sij,sti->stj", gv, gb).reshape(S, n) if x.needs_grad else None
        return np.einsum("sti,stj->sij", gb, xb), gx

    return tape.custom(np.einsum("sij,stj->sti", gv, xb).reshape(S, n), (g, x), vjp)
