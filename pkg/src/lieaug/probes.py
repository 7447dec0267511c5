"""Self-checks that need no training: gradient checks and matrix-exponential identities."""

from __future__ import annotations

import numpy as np

from . import augmenter as aug
from . import matexp
from . import numkern as nk
from .model import MlpSpec, init_mlp, mlp_forward
from .numkern import ParamStore
from .objective import LossWeights, batch_objective, loss_emp
from .rng import stream


def _store(**arrays) -> ParamStore:
    s = ParamStore()
    for k, v in arrays.items():
        s.add(k, v)
    return s


def gradient_checks(seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Worst relative error of tape gradients against central differences, per case."""
    rng = stream(seed, "probe", "gradcheck")
    r = rng.standard_normal
    out: dict[str, float] = {}

    def check(name, build, **arrays):
        out[name] = nk.gradcheck(build, _store(**arrays), h)

    check("matmul", lambda t, n: nk.sum(nk.matmul(n["a"], n["b"])), a=r((3, 4)), b=r((4, 2)))
    check("sum_product", lambda t, n: nk.sum(nk.mul(n["a"], n["b"])), a=r((3, 4)), b=r((3, 4)))
    check("add", lambda t, n: nk.sum(nk.square(nk.add(n["a"], n["b"]))), a=r((3, 4)), b=r((3, 4)))
    # shift away from zero so the kink is never straddled by the difference stencil
    ra = r((5, 4))
    ra = np.where(np.abs(ra) < 0.1, 0.5, ra)
    check("relu", lambda t, n: nk.sum(nk.mul(nk.relu(n["a"]), t.constant(np.arange(20.0).reshape(5, 4)))), a=ra)
    check("tanh", lambda t, n: nk.sum(nk.tanh(n["a"])), a=r((5, 4)))
    check("smooth_l1", lambda t, n: nk.sum(nk.smooth_abs(n["a"])), a=r((5, 4)))
    y = r((6, 3))
    check("mse", lambda t, n: loss_emp(n["a"], y), a=r((6, 3)))
    check("cosine_similarity", lambda t, n: nk.cosine_similarity(n["a"], n["b"]), a=r((3, 3)), b=r((3, 3)))
    check("cosine_rows", lambda t, n: nk.sum(nk.cosine_rows(n["a"], n["b"])), a=r((4, 5)), b=r((4, 5)))

    spec = MlpSpec(5, 2, (7, 6, 5), "tanh")
    mlp = init_mlp(spec, rng)
    x = r((4, 5))
    out["mlp_4_layer"] = nk.gradcheck(lambda t, n: nk.sum(nk.square(mlp_forward(n, t.constant(x), spec))), mlp, h)

    check("trace_expm", lambda t, n: nk.sum(nk.mul(matexp.expm_node(n["A"]), t.constant(np.eye(3)))), A=r((3, 3)))

    d, C = 4, 2
    w = rng.uniform(-1, 1, size=(1, C))
    xv, yv = r((1, d)), r((1, d))

    def exp_action(t, n):
        g = matexp.expm_node(aug.lie_element_node(w, n["L"]))
        return nk.sum(nk.smooth_abs(nk.sub(aug.block_apply_node(g, xv, d), t.constant(yv))))

    check("expm_action_l1", exp_action, L=0.5 * r((C, d, d)))

    # full objective on a tiny equivariant problem, generators and predictor together
    action = aug.ActionSpec(d=2, timesteps=2, output_action="equivariant")
    pspec = MlpSpec(4, 4, (6, 6), "tanh")
    store = init_mlp(pspec, rng)
    store.add("generators", 0.7 * r((2, 2, 2)))
    xb, yb = r((3, 4)), r((3, 4))
    wb = rng.uniform(-1, 1, size=(3 * 2, 2))
    weights = LossWeights(alpha=1.0, beta=2.0, lam=0.5, eta=0.3, nu=0.1, K=2)

    def objective(t, n):
        total, _ = batch_objective(lambda z: mlp_forward(n, z, pspec), n["generators"], xb, yb, wb, action, weights, t)
        return total

    out["full_objective"] = nk.gradcheck(objective, store, h)
    return out


def frechet_check(seed: int = 0, h: float = 1e-6) -> float:
    rng = stream(seed, "probe", "frechet")
    A, E = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    fd = (matexp.expm(A + h * E) - matexp.expm(A - h * E)) / (2 * h)
    return nk.relative_error(matexp.expm_frechet(A, E)[1], fd)


def expm_identities(seed: int = 0, trials: int = 20, max_norm: float = 5.0) -> dict[str, float]:
    """Worst error of each identity over random matrices with Frobenius norm up to ``max_norm``."""
    rng = stream(seed, "probe", "expm")
    out = {"exp_zero": float(np.max(np.abs(matexp.expm(np.zeros((6, 6))) - np.eye(6))))}
    inv = det = orth = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, 9))
        A = rng.standard_normal((d, d))
        A *= rng.uniform(0.1, max_norm) / np.linalg.norm(A)
        E = matexp.expm(A)
        inv = max(inv, float(np.max(np.abs(E @ matexp.expm(-A) - np.eye(d)))))
        det = max(det, float(abs(np.linalg.det(E) - np.exp(np.trace(A))) / np.exp(np.trace(A))))
        S = A - A.T
        S *= rng.uniform(0.1, max_norm) / np.linalg.norm(S)
        Q = matexp.expm(S)
        orth = max(orth, float(np.max(np.abs(Q.T @ Q - np.eye(d)))))
    out.update(inverse=inv, det_trace=det, skew_orthogonal=orth)
    return out
