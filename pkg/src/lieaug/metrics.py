"""Symmetry-recovery scores, equivariance errors and theory probes."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import augmenter as aug
from . import numkern as nk
from .numkern import ShapeError

Predictor = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# basis recovery


@dataclass
class BasisReport:
    matched: list[int]
    signs: list[int]
    abs_cos: list[float]
    projection: list[float]
    mean_abs_cos: float = field(init=False)
    mean_projection: float = field(init=False)

    def __post_init__(self):
        self.mean_abs_cos = float(np.mean(self.abs_cos)) if self.abs_cos else float("nan")
        self.mean_projection = float(np.mean(self.projection)) if self.projection else float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def _as_stack(a, name: str) -> np.ndarray:
    a = nk.as_tensor(a)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ShapeError(f"{name} must be (C, d, d) or (d, d), got {a.shape}")
    return a


def frobenius_projection(learned, truth) -> float:
    """<L, L*>_F / ||L*||_F^2."""
    learned, truth = nk.as_tensor(learned), nk.as_tensor(truth)
    if learned.shape != truth.shape:
        raise ShapeError(f"shapes differ: {learned.shape} vs {truth.shape}")
    return float(np.sum(learned * truth) / np.sum(truth * truth))


def basis_cosine_similarity(learned, truth) -> BasisReport:
    """Greedy sign-aligned matching of learned generators to ground-truth generators.

    Pairs are taken in decreasing order of |cos|; each ground-truth generator is
    used once until all have been used, after which matching starts over.
    """
    L = _as_stack(learned, "learned")
    T = _as_stack(truth, "truth")
    if L.shape[1:] != T.shape[1:]:
        raise ShapeError(f"dimension mismatch: learned {L.shape[1:]} vs truth {T.shape[1:]}")
    Lf = L.reshape(len(L), -1)
    Tf = T.reshape(len(T), -1)
    ln = np.linalg.norm(Lf, axis=1)
    tn = np.linalg.norm(Tf, axis=1)
    denom = np.outer(ln, tn)
    inner = Lf @ Tf.T
    cos = np.divide(inner, denom, out=np.zeros_like(inner), where=denom > 0)
    acos = np.clip(np.abs(cos), 0.0, 1.0)

    matched = [-1] * len(L)
    pending = set(range(len(L)))
    while pending:
        free = set(range(len(T)))
        while pending and free:
            best = None
            for i in sorted(pending):
                for j in sorted(free):
                    # strict comparison keeps the lowest ground-truth index on ties
                    if best is None or acos[i, j] > acos[best]:
                        best = (i, j)
            i, j = best
            matched[i] = j
            pending.discard(i)
            free.discard(j)
    signs = [1 if inner[i, j] >= 0 else -1 for i, j in enumerate(matched)]
    return BasisReport(
        matched=matched,
        signs=signs,
        abs_cos=[float(acos[i, j]) for i, j in enumerate(matched)],
        projection=[s * frobenius_projection(L[i], T[j]) for i, (j, s) in enumerate(zip(matched, signs))],
    )


# ---------------------------------------------------------------------------
# equivariance errors

GroupDraw = Callable[[int, np.random.Generator], np.ndarray]


def lie_group(generators, sampler: aug.SamplerConfig) -> GroupDraw:
    """Draw exp(sum_i w_i L_i) with w from ``sampler``."""
    gens = _as_stack(generators, "generators")

    def draw(K, rng):
        return aug.group_sample(gens, aug.sample_coefficients(sampler, K, gens.shape[0], rng)).g

    return draw


def finite_group(elements) -> GroupDraw:
    """Uniform draws with replacement from an explicit list of matrices."""
    elements = _as_stack(elements, "elements")

    def draw(K, rng):
        return elements[rng.integers(0, len(elements), size=K)]

    return draw


def true_group(name: str, d: int, gamma: float, k: int = 6) -> GroupDraw | None:
    """The known symmetry group of each task, or None when there is none."""
    if name == "two_body":
        from .datasets import two_body_truth

        return lie_group(two_body_truth(), aug.SamplerConfig(gamma))
    if name == "discrete_rotation":
        mats = []
        for j in range(k):
            g = np.eye(3)
            g[:2, :2] = block_rotation(2 * np.pi * j / k, blocks=1)
            mats.append(g)
        return finite_group(np.stack(mats))
    if name == "partial_permutation":
        import itertools

        mats = []
        for perm in itertools.permutations(range(3)):
            g = np.eye(d)
            g[:3, :3] = np.eye(3)[list(perm)]
            mats.append(g)
        return finite_group(np.stack(mats))
    return None


def _deviations(psi: Predictor, group: GroupDraw, x, K, spec, rng):
    """Return (rho_Y(g_j) psi(x_i), psi(rho_X(g_j) x_i)) for K draws shared by every item."""
    x = nk.as_tensor(x)
    gs = group(K, rng)
    base = psi(x)
    transformed = np.empty((K,) + base.shape)
    after = np.empty_like(transformed)
    for j, g in enumerate(gs):
        after[j] = psi(aug.block_apply(g, x, spec.d))
        transformed[j] = aug.block_apply(g, base, spec.d) if spec.equivariant else base
    return transformed, after


def equivariance_error(psi: Predictor, group: GroupDraw, x, K: int, spec, rng) -> float:
    """Mean l1 distance between the predict-then-transform and transform-then-predict averages."""
    transformed, after = _deviations(psi, group, x, K, spec, rng)
    return float(np.mean(np.abs(transformed.mean(axis=0) - after.mean(axis=0)).sum(axis=1)))


def equivariance_error_alt(psi: Predictor, group: GroupDraw, x, K: int, spec, rng) -> float:
    """Mean over items and draws of the per-draw l1 deviation."""
    transformed, after = _deviations(psi, group, x, K, spec, rng)
    return float(np.mean(np.abs(transformed - after).sum(axis=2)))


# ---------------------------------------------------------------------------
# no-symmetry signature


@dataclass
class NoSymmetrySignature:
    mass_fraction: list[float]
    top_entry: list[tuple[int, int, int]]  # (generator, row, col)
    distinct_locations: int

    def as_dict(self) -> dict:
        return {
            "mass_fraction": self.mass_fraction,
            "top_entry": [list(t) for t in self.top_entry],
            "distinct_locations": self.distinct_locations,
        }


def no_symmetry_signature(runs: Sequence) -> NoSymmetrySignature:
    """Share of l1 mass on the largest entry of each run, and how many distinct entries win."""
    fractions, tops = [], []
    for r in runs:
        gens = _as_stack(getattr(r, "generators", r), "generators")
        a = np.abs(gens)
        total = a.sum()
        if not total > 0:
            raise ValueError("generator basis is identically zero")
        flat = int(np.argmax(a))
        fractions.append(float(a.flat[flat] / total))
        tops.append(tuple(int(i) for i in np.unravel_index(flat, a.shape)))
    return NoSymmetrySignature(fractions, tops, len(set(tops)))


# ---------------------------------------------------------------------------
# Monte Carlo variance


@dataclass
class VarianceProbe:
    K: list[int]
    variance: list[float]
    slope: float
    degenerate: bool


def loglog_slope(K: Sequence[int], variance: Sequence[float], floor: float = 1e-20) -> tuple[float, bool]:
    v = np.asarray(variance, dtype=np.float64)
    if np.all(v <= floor):
        return float("nan"), True
    if np.any(v <= 0):
        return float("nan"), True
    slope = np.polyfit(np.log(np.asarray(K, dtype=np.float64)), np.log(v), 1)[0]
    return float(slope), False


def mc_variance(estimator: Callable[[int, np.random.Generator], float], K_list, trials: int, rng) -> VarianceProbe:
    """Variance over ``trials`` independent calls of ``estimator(K, rng)`` for each K."""
    variances = []
    for K in K_list:
        vals = np.array([estimator(K, rng) for _ in range(trials)])
        variances.append(float(vals.var(ddof=1)))
    slope, degenerate = loglog_slope(K_list, variances)
    return VarianceProbe(list(K_list), variances, slope, degenerate)


def mc_variance_probe(
    psi: Predictor, generators, x, y, K_list, trials: int, sampler, spec, rng
) -> VarianceProbe:
    """Variance of the K-draw equivariance-loss estimator at fixed data, as a function of K."""
    generators = _as_stack(generators, "generators")
    x, y = nk.as_tensor(x), nk.as_tensor(y)
    N = x.shape[0]
    variances = []
    for K in K_list:
        w = aug.sample_coefficients(sampler, trials * N * K, generators.shape[0], rng)
        sample = aug.group_sample(generators, w)
        xr = np.tile(np.repeat(x, K, axis=0), (trials, 1))
        yr = np.tile(np.repeat(y, K, axis=0), (trials, 1))
        target = aug.act_output(sample, yr, spec)
        dev = np.sqrt((psi(aug.act_input(sample, xr, spec)) - target) ** 2 + nk.SMOOTH_TAU**2).sum(axis=1)
        est = dev.reshape(trials, N * K).mean(axis=1)
        variances.append(float(est.var(ddof=1)))
    slope, degenerate = loglog_slope(K_list, variances)
    return VarianceProbe(list(K_list), variances, slope, degenerate)


# ---------------------------------------------------------------------------
# alternative two-body representation


def block_rotation(angle: float, blocks: int = 4) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.kron(np.eye(blocks), np.array([[c, -s], [s, c]]))


def antipodal_states(n: int, rng: np.random.Generator) -> np.ndarray:
    """Two-body states in the centre-of-mass frame: q2 = -q1, p2 = -p1."""
    q, p = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
    return np.concatenate([q, p, -q, -p], axis=1)


@dataclass
class AltRepResult:
    passed: bool
    rate: float  # best angle multiplier
    max_error: float


def fitted_rate(L, states: np.ndarray, w: float = 0.1) -> float:
    """Rotation rate of exp(w L) on the first body's position, averaged over states."""
    q = states[:, 0:2]
    moved = (aug.group_sample(nk.as_tensor(L)[None], np.array([w])).g @ states.T).T[:, 0:2]
    angle = np.arctan2(q[:, 0] * moved[:, 1] - q[:, 1] * moved[:, 0], np.sum(q * moved, axis=1))
    return float(np.mean(angle) / w)


def alternative_rep_check(L, w_grid=None, tol: float = 1e-2, rates=(1.0, -1.0, 2.0, -2.0), n_states: int = 16, seed: int = 0) -> AltRepResult:
    """Does exp(w L) act on centre-of-mass states like a block rotation by a fixed multiple of w?

    Candidate multiples are ``rates`` (w and 2w of either sign) plus the rate read off
    exp(0.1 L) itself, refined within 5% to minimise the deviation; this covers
    normalised generators whose scale rescales the angle. The error is the largest
    relative l-infinity deviation over the grid and a fixed set of antipodal states.
    """
    L = nk.as_tensor(L)
    if L.shape != (8, 8):
        raise ShapeError(f"expected an 8x8 generator, got {L.shape}")
    grid = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.1), 10) if w_grid is None else np.asarray(w_grid, dtype=np.float64)
    states = antipodal_states(n_states, np.random.default_rng(seed))
    scale = np.abs(states).max(axis=1)
    g = aug.group_sample(L[None], grid[:, None]).g  # (W, 8, 8)
    moved = np.einsum("wij,nj->wni", g, states)
    r0 = fitted_rate(L, states)
    best = (np.inf, float("nan"))
    for r in (*rates, *(r0 * np.linspace(0.95, 1.05, 101))):
        ref = np.einsum("wij,nj->wni", np.stack([block_rotation(r * w) for w in grid]), states)
        err = float((np.abs(moved - ref).max(axis=2) / scale).max())
        if err < best[0]:
            best = (err, float(r))
    return AltRepResult(best[0] <= tol, best[1], best[0])


# ---------------------------------------------------------------------------
# transformation-shift bound


def smooth_euclid_loss(u: np.ndarray, y: np.ndarray) -> np.ndarray:
    """sqrt(||u - y||^2 + tau^2): rotation invariant and 1-Lipschitz in the l1 norm."""
    return np.sqrt(np.sum((u - y) ** 2, axis=-1) + nk.SMOOTH_TAU**2)


@dataclass
class ShiftBound:
    clean_risk: float
    shifted_risk: list[float]
    consistency: list[float]
    lipschitz: float
    slack: list[float]

    @property
    def violators(self) -> list[int]:
        return [i for i, s in enumerate(self.slack) if s < 0]

    @property
    def holds(self) -> bool:
        return not self.violators


def shift_bound_check(psi: Predictor, group: GroupDraw, x, y, spec, n_group: int, rng) -> ShiftBound:
    """Check risk(g-shifted data) <= clean risk + L * E||psi(gx) - g psi(x)||_1 for sampled g.

    L is the largest observed ratio |loss(psi(gx), gy) - loss(g psi(x), gy)| / ||psi(gx) - g psi(x)||_1,
    which can never exceed 1 for this loss.
    """
    x, y = nk.as_tensor(x), nk.as_tensor(y)
    base = psi(x)
    clean = smooth_euclid_loss(base, y)
    gs = group(n_group, rng)
    shifted, consistency, ratios = [], [], []
    for g in gs:
        gx = aug.block_apply(g, x, spec.d)
        gy = aug.block_apply(g, y, spec.d) if spec.equivariant else y
        u = psi(gx)
        v = aug.block_apply(g, base, spec.d) if spec.equivariant else base
        lu = smooth_euclid_loss(u, gy)
        lv = smooth_euclid_loss(v, gy)
        d1 = np.abs(u - v).sum(axis=1)
        ok = d1 > 0
        ratios.append(float(np.max(np.abs(lu - lv)[ok] / d1[ok])) if ok.any() else 0.0)
        shifted.append(float(lu.mean()))
        consistency.append(float(d1.mean()))
    lip = max(ratios)
    R = float(clean.mean())
    slack = [R + lip * c - s for s, c in zip(shifted, consistency)]
    return ShiftBound(R, shifted, consistency, lip, slack)
