"""Matrix exponential with exact derivatives.

``expm`` uses scaling and squaring with the degree-13 Padé approximant
(Higham 2005). All functions accept a single ``(d, d)`` matrix or a stack
``(..., d, d)``; each matrix in a stack gets its own scaling exponent.
"""

from __future__ import annotations

import numpy as np

from .numkern import Node, ShapeError

MAX_DIM = 64

# Padé-13 coefficients and the 1-norm bound below which no scaling is needed.
_B13 = np.array(
    [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ]
)
_THETA13 = 5.371920351148152


class DomainError(ValueError):
    pass


def _check_square(A: np.ndarray, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ShapeError(f"{name} must be square, got shape {A.shape}")
    if A.shape[-1] > MAX_DIM:
        raise ShapeError(f"{name} dimension {A.shape[-1]} exceeds {MAX_DIM}")
    if not np.all(np.isfinite(A)):
        raise DomainError(f"{name} has non-finite entries")
    return A


def _pade13(A: np.ndarray) -> np.ndarray:
    b = _B13
    ident = np.broadcast_to(np.eye(A.shape[-1]), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    return np.linalg.solve(V - U, V + U)


def expm(A) -> np.ndarray:
    return _expm(_check_square(A))


def _expm(A: np.ndarray) -> np.ndarray:
    As = A.reshape((-1,) + A.shape[-2:])
    norm1 = np.abs(As).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(norm1 / _THETA13))
    s = np.where(np.isfinite(s) & (s > 0), s, 0).astype(np.int64)
    R = _pade13(As / np.exp2(s)[:, None, None])
    for j in range(int(s.max(initial=0))):
        pending = s > j
        R[pending] = R[pending] @ R[pending]
    # the rational approximant reproduces I only up to rounding; make exp(0) exact
    R[norm1 == 0] = np.eye(A.shape[-1])
    return R.reshape(A.shape)


def expm_frechet(A, E) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(expm(A), D)`` with D the derivative of exp at A in direction E.

    Reads both blocks off exp([[A, E], [0, A]]) = [[exp A, D], [0, exp A]].
    """
    A = _check_square(A)
    E = _check_square(E, "E")
    if A.shape != E.shape:
        raise ShapeError(f"A and E shapes differ: {A.shape} vs {E.shape}")
    d = A.shape[-1]
    M = np.zeros(A.shape[:-2] + (2 * d, 2 * d))
    M[..., :d, :d] = A
    M[..., d:, d:] = A
    M[..., :d, d:] = E
    X = _expm(M)
    return _expm(A), X[..., :d, d:].copy()


def expm_adjoint(A, G) -> np.ndarray:
    """Gradient w.r.t. A of <G, exp(A)>: the Fréchet derivative at A^T applied to G."""
    A = _check_square(A)
    G = _check_square(G, "G")
    if A.shape != G.shape:
        raise ShapeError(f"A and G shapes differ: {A.shape} vs {G.shape}")
    return expm_frechet(np.swapaxes(A, -1, -2), G)[1]


def expm_node(A: Node) -> Node:
    """Tape node for exp(A) whose backward rule is :func:`expm_adjoint`."""
    Av = A.value
    return A.tape.custom(expm(Av), (A,), lambda g: (expm_adjoint(Av, g),))
