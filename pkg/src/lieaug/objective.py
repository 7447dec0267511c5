"""Training objective: supervised MSE, equivariance loss and the three regularisers."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass

import numpy as np

from . import augmenter as aug
from . import matexp
from . import numkern as nk
from .numkern import Node, ShapeError

TERMS = ("emp", "equiv", "areg", "bsreg", "bcreg")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 10.0
    lam: float = 1.0
    eta: float = 0.0
    nu: float = 1e-3
    K: int = 10

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be >= 0, got {v}")

    def weight(self, term: str) -> float:
        return {"emp": self.alpha, "equiv": self.beta, "areg": self.lam, "bsreg": self.nu, "bcreg": self.eta}[term]


@dataclass
class LossBreakdown:
    emp: float
    equiv: float
    areg: float
    bsreg: float
    bcreg: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def loss_emp(yhat: Node, y) -> Node:
    """Mean over the batch of squared Euclidean residual norms."""
    y = y if isinstance(y, Node) else yhat.tape.constant(y)
    if yhat.shape != y.shape:
        raise ShapeError(f"prediction {yhat.shape} vs target {y.shape}")
    r = nk.sub(y, yhat)
    return nk.mean(nk.sum(nk.square(r), axis=1))


def l1_rows(yhat: Node, target) -> Node:
    target = target if isinstance(target, Node) else yhat.tape.constant(target)
    if yhat.shape != target.shape:
        raise ShapeError(f"prediction {yhat.shape} vs target {target.shape}")
    return nk.sum(nk.smooth_abs(nk.sub(yhat, target)), axis=1)


def loss_equiv_views(yhat_aug: Node, y_aug) -> Node:
    """Mean smoothed l1 deviation over all (item, draw) rows."""
    return nk.mean(l1_rows(yhat_aug, y_aug))


def reg_areg(x_rep, x_aug: Node) -> Node:
    """Mean |cos| between each input and its transformed copy."""
    x_rep = x_rep if isinstance(x_rep, Node) else x_aug.tape.constant(x_rep)
    return nk.mean(nk.smooth_abs(nk.cosine_rows(x_rep, x_aug)))


def reg_bsreg(gens: Node) -> Node:
    return nk.sum(nk.smooth_abs(gens))


def reg_bcreg(gens: Node) -> Node:
    C = gens.value.shape[0]
    flat = nk.reshape(gens, (C, -1))
    if C < 2:
        return nk.scale(nk.sum(flat), 0.0)
    ii, jj = np.triu_indices(C, k=1)
    sel_i = flat.tape.custom(flat.value[ii], (flat,), lambda g: (_scatter_rows(g, ii, C),))
    sel_j = flat.tape.custom(flat.value[jj], (flat,), lambda g: (_scatter_rows(g, jj, C),))
    return nk.sum(nk.smooth_abs(nk.cosine_rows(sel_i, sel_j)))


def _scatter_rows(g: np.ndarray, idx: np.ndarray, C: int) -> np.ndarray:
    out = np.zeros((C,) + g.shape[1:])
    np.add.at(out, idx, g)
    return out


def loss_total(terms: dict[str, Node], weights: LossWeights) -> Node:
    total = None
    for name in TERMS:
        part = nk.scale(terms[name], weights.weight(name))
        total = part if total is None else nk.add(total, part)
    return total


def breakdown(terms: dict[str, Node], total: Node) -> LossBreakdown:
    return LossBreakdown(**{k: float(terms[k].value) for k in TERMS}, total=float(total.value))


# ---------------------------------------------------------------------------
# full batch objective


@dataclass
class AugmentedBatch:
    x_rep: np.ndarray  # (B*K, n) originals repeated K times
    x_aug: Node
    y_aug: Node | np.ndarray
    g: Node


def augment_batch(gens: Node, w: np.ndarray, x: np.ndarray, y: np.ndarray, spec: aug.ActionSpec) -> AugmentedBatch:
    """Build K transformed views per item; w has shape (B*K, C), item-major."""
    B = x.shape[0]
    K = w.shape[0] // B
    g = matexp.expm_node(aug.lie_element_node(w, gens))
    x_rep = np.repeat(x, K, axis=0)
    x_aug = aug.block_apply_node(g, x_rep, spec.d)
    y_rep = np.repeat(y, K, axis=0)
    y_aug = aug.block_apply_node(g, y_rep, spec.d) if spec.equivariant else y_rep
    return AugmentedBatch(x_rep, x_aug, y_aug, g)


def batch_objective(
    psi: Callable[[Node], Node],
    gens: Node | None,
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray | None,
    spec: aug.ActionSpec,
    weights: LossWeights,
    tape: nk.Tape,
) -> tuple[Node, dict[str, Node]]:
    """Assemble every term for one minibatch. ``w=None`` or K=0 disables augmentation terms."""
    B = x.shape[0]
    zero = tape.constant(0.0)
    if w is None or weights.K == 0 or gens is None:
        yhat = psi(tape.constant(x))
        terms = {"emp": loss_emp(yhat, y), "equiv": zero, "areg": zero}
    else:
        batch = augment_batch(gens, w, x, y, spec)
        out = psi(nk.concat_rows([tape.constant(x), batch.x_aug]))
        yhat = nk.slice_rows(out, 0, B)
        yhat_aug = nk.slice_rows(out, B, out.value.shape[0])
        terms = {
            "emp": loss_emp(yhat, y),
            "equiv": loss_equiv_views(yhat_aug, batch.y_aug),
            "areg": reg_areg(batch.x_rep, batch.x_aug),
        }
    if gens is None:
        terms["bsreg"] = zero
        terms["bcreg"] = zero
    else:
        terms["bsreg"] = reg_bsreg(gens)
        terms["bcreg"] = reg_bcreg(gens)
    return loss_total(terms, weights), terms


def loss_equiv(
    psi: Callable[[np.ndarray], np.ndarray],
    generators: np.ndarray,
    w: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    spec: aug.ActionSpec,
) -> float:
    """Value of the equivariance loss for a fixed predictor and fixed draws w (B*K, C)."""
    if w.shape[0] == 0:
        return 0.0
    return loss_equiv_elements(psi, aug.group_sample(generators, w).g, x, y, spec)


def loss_equiv_elements(
    psi: Callable[[np.ndarray], np.ndarray],
    g: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    spec: aug.ActionSpec,
) -> float:
    """Equivariance loss with explicit group elements g (B*K, d, d), item-major."""
    B = x.shape[0]
    K = g.shape[0] // B
    x_aug = aug.block_apply(g, np.repeat(x, K, axis=0), spec.d)
    y_rep = np.repeat(y, K, axis=0)
    y_aug = aug.block_apply(g, y_rep, spec.d) if spec.equivariant else y_rep
    dev = np.sqrt((psi(x_aug) - y_aug) ** 2 + nk.SMOOTH_TAU**2).sum(axis=1)
    return float(dev.mean())
