"""Seeded task generators with ground-truth symmetry metadata."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .augmenter import ActionSpec
from .rng import stream

ROT2 = np.array([[0.0, -1.0], [1.0, 0.0]])


class GenerationError(RuntimeError):
    pass


@dataclass
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    action: ActionSpec
    truth: np.ndarray | None  # (C*, d, d) ground-truth generators, if known
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x_train.shape[1]

    @property
    def m(self) -> int:
        return self.y_train.shape[1]

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"x_{which}"), getattr(self, f"y_{which}")

    def sizes(self) -> dict[str, int]:
        return {s: int(getattr(self, f"x_{s}").shape[0]) for s in ("train", "val", "test")}


# ---------------------------------------------------------------------------
# two-body dynamics


@dataclass(frozen=True)
class TwoBodyConfig:
    n_train: int = 14652
    n_val: int = 1628
    n_test: int = 14220
    timesteps_in: int = 1
    timesteps_out: int = 1
    ood: bool = False
    dt: float = 0.0025
    stride: int = 20  # integrator steps between snapshots
    snapshots: int = 40  # snapshots per trajectory
    radius_min: float = 0.75
    radius_max: float = 1.25
    speed_noise: float = 0.05
    random_spin: bool = False  # False: every orbit runs counter-clockwise

    def __post_init__(self):
        if self.timesteps_in not in (1, 3) or self.timesteps_out not in (1, 3):
            raise ValueError("timesteps_in/out must be 1 or 3")
        if self.snapshots < self.timesteps_in + self.timesteps_out:
            raise ValueError("trajectory too short for the requested window")


def two_body_truth() -> np.ndarray:
    """Simultaneous rotation of both positions and both momenta."""
    return np.kron(np.eye(4), ROT2)[None]


def two_body_energy(states: np.ndarray) -> np.ndarray:
    """Hamiltonian of (..., 8) states with G = m1 = m2 = 1."""
    q1, p1, q2, p2 = states[..., 0:2], states[..., 2:4], states[..., 4:6], states[..., 6:8]
    kinetic = 0.5 * np.sum(p1 * p1, axis=-1) + 0.5 * np.sum(p2 * p2, axis=-1)
    return kinetic - 1.0 / np.linalg.norm(q1 - q2, axis=-1)


def leapfrog(states: np.ndarray, dt: float, steps: int) -> np.ndarray:
    """Kick-drift-kick integration of a batch of (..., 8) states."""
    s = np.array(states, dtype=np.float64)
    q1, p1, q2, p2 = s[..., 0:2], s[..., 2:4], s[..., 4:6], s[..., 6:8]

    def force(q1, q2):
        diff = q1 - q2
        r = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
        return -diff / r**3

    f = force(q1, q2)
    for _ in range(steps):
        p1 += 0.5 * dt * f
        p2 -= 0.5 * dt * f
        q1 += dt * p1
        q2 += dt * p2
        f = force(q1, q2)
        p1 += 0.5 * dt * f
        p2 -= 0.5 * dt * f
    return s


def two_body_initial(n: int, cfg: TwoBodyConfig, rng: np.random.Generator) -> np.ndarray:
    """Near-circular centre-of-mass-frame states with random phase and radius."""
    r = rng.uniform(cfg.radius_min, cfg.radius_max, size=n)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    flip = rng.random(n) < 0.5
    spin = np.where(flip, -1.0, 1.0) if cfg.random_spin else np.ones(n)
    speed = 0.5 / np.sqrt(r) * (1.0 + rng.uniform(-cfg.speed_noise, cfg.speed_noise, size=n))
    q1 = r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    p1 = (spin * speed)[:, None] * np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    return np.concatenate([q1, p1, -q1, -p1], axis=1)


def two_body_trajectories(init: np.ndarray, cfg: TwoBodyConfig) -> np.ndarray:
    """(n, snapshots, 8) trajectories sampled every ``stride`` integrator steps."""
    out = np.empty((init.shape[0], cfg.snapshots, 8))
    s = init
    out[:, 0] = s
    for k in range(1, cfg.snapshots):
        s = leapfrog(s, cfg.dt, cfg.stride)
        out[:, k] = s
    return out


def two_body_step(x: np.ndarray, cfg: TwoBodyConfig) -> np.ndarray:
    """Exact target map: advance the last input state and emit the next output snapshots."""
    x = np.atleast_2d(x)
    s = x[:, -8:]
    outs = []
    for _ in range(cfg.timesteps_out):
        s = leapfrog(s, cfg.dt, cfg.stride)
        outs.append(s)
    return np.concatenate(outs, axis=1)


def _windows(traj: np.ndarray, t_in: int, t_out: int) -> tuple[np.ndarray, np.ndarray]:
    n, T, _ = traj.shape
    starts = range(T - t_in - t_out + 1)
    xs = np.stack([traj[:, t : t + t_in].reshape(n, -1) for t in starts], axis=1)
    ys = np.stack([traj[:, t + t_in : t + t_in + t_out].reshape(n, -1) for t in starts], axis=1)
    return xs.reshape(-1, 8 * t_in), ys.reshape(-1, 8 * t_out)


def _quadrant_keep(x: np.ndarray, train_side: bool) -> np.ndarray:
    qx, qy = x[:, 0], x[:, 1]
    even = (qx < 0) & (qy > 0) | (qx > 0) & (qy < 0)  # quadrants II and IV
    odd = (qx > 0) & (qy > 0) | (qx < 0) & (qy < 0)  # quadrants I and III
    return even if train_side else odd


def _two_body_split(cfg: TwoBodyConfig, seed: int, split: str, count: int) -> tuple[np.ndarray, np.ndarray]:
    if count == 0:
        return np.zeros((0, 8 * cfg.timesteps_in)), np.zeros((0, 8 * cfg.timesteps_out))
    xs, ys, have, chunk = [], [], 0, 0
    per_traj = cfg.snapshots - cfg.timesteps_in - cfg.timesteps_out + 1
    while have < count:
        need = max(8, int(np.ceil((count - have) / per_traj * (2.2 if cfg.ood else 1.0))))
        init = two_body_initial(need, cfg, stream(seed, "two_body", split, chunk))
        x, y = _windows(two_body_trajectories(init, cfg), cfg.timesteps_in, cfg.timesteps_out)
        if cfg.ood:
            keep = _quadrant_keep(x, train_side=split != "test")
            x, y = x[keep], y[keep]
        xs.append(x)
        ys.append(y)
        have += x.shape[0]
        chunk += 1
        if chunk > 1000:
            raise GenerationError(f"could not fill the {split} split")
    return np.concatenate(xs)[:count], np.concatenate(ys)[:count]


def gen_two_body(cfg: TwoBodyConfig = TwoBodyConfig(), seed: int = 0) -> Dataset:
    splits = {
        s: _two_body_split(cfg, seed, s, n)
        for s, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test))
    }
    if splits["train"][0].shape[0] == 0:
        raise GenerationError("train split is empty")
    action = ActionSpec(d=8, timesteps=cfg.timesteps_in, output_action="equivariant", timesteps_out=cfg.timesteps_out)
    return Dataset(
        "two_body",
        *splits["train"],
        *splits["val"],
        *splits["test"],
        action=action,
        truth=two_body_truth(),
        seed=seed,
        meta={"config": asdict(cfg)},
    )


# ---------------------------------------------------------------------------
# discrete rotations


def discrete_rotation_target(x: np.ndarray, k: int) -> np.ndarray:
    """z / (1 + (atan2(y, x) mod 2pi/k))."""
    angle = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi / k)
    return (x[..., 2] / (1.0 + angle))[..., None]


def discrete_rotation_truth() -> np.ndarray:
    L = np.zeros((3, 3))
    L[:2, :2] = ROT2
    return L[None]


def gen_discrete_rotation(k: int = 6, sizes=(54000, 6000, 10000), seed: int = 0) -> Dataset:
    if k < 2:
        raise ValueError("k must be >= 2")
    parts = []
    for split, n in zip(("train", "val", "test"), sizes):
        x = stream(seed, "discrete_rotation", split).standard_normal((n, 3))
        parts += [x, discrete_rotation_target(x, k)]
    return Dataset(
        "discrete_rotation", *parts, action=ActionSpec(d=3), truth=discrete_rotation_truth(), seed=seed, meta={"k": k}
    )


# ---------------------------------------------------------------------------
# partial permutations


def partial_permutation_target(x: np.ndarray) -> np.ndarray:
    return (x[..., 0] + x[..., 1] + x[..., 2] + x[..., 3] ** 2 - x[..., 4] ** 2)[..., None]


def partial_permutation_truth() -> np.ndarray:
    """Infinitesimal transpositions P_ij - I for the pairs of coordinates 1..3."""
    gens = []
    for i, j in ((0, 1), (0, 2), (1, 2)):
        L = np.zeros((5, 5))
        L[i, j] = L[j, i] = 1.0
        L[i, i] = L[j, j] = -1.0
        gens.append(L)
    return np.stack(gens)


def gen_partial_permutation(sizes=(54000, 6000, 10000), seed: int = 0) -> Dataset:
    parts = []
    for split, n in zip(("train", "val", "test"), sizes):
        x = stream(seed, "partial_permutation", split).uniform(-100.0, 100.0, size=(n, 5))
        parts += [x, partial_permutation_target(x)]
    return Dataset(
        "partial_permutation", *parts, action=ActionSpec(d=5), truth=partial_permutation_truth(), seed=seed
    )


# ---------------------------------------------------------------------------
# no symmetry

NO_SYM_MEAN = np.array([0.2, -0.1, 0.3, -0.2, 0.15])
NO_SYM_VAR = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
NO_SYM_NOISE = 0.01


def frozen_target_params(seed: int, width: int = 64, weight_std: float = 0.01) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = stream(seed, "no_symmetry", "target")
    widths = [5, width, width, 1]
    return [
        (rng.normal(0.0, weight_std, size=(a, b)), rng.normal(0.0, weight_std, size=b))
        for a, b in zip(widths[:-1], widths[1:])
    ]


def frozen_target(x: np.ndarray, params) -> np.ndarray:
    h = x
    for i, (W, b) in enumerate(params):
        h = h @ W + b
        if i < len(params) - 1:
            h = np.tanh(h)
    return h


def gen_no_symmetry(sizes=(50000, 10000, 10000), seed: int = 0) -> Dataset:
    params = frozen_target_params(seed)
    parts = []
    for split, n in zip(("train", "val", "test"), sizes):
        rng = stream(seed, "no_symmetry", split)
        x = NO_SYM_MEAN + np.sqrt(NO_SYM_VAR) * rng.standard_normal((n, 5))
        y = frozen_target(x, params) + NO_SYM_NOISE * rng.standard_normal((n, 1))
        parts += [x, y]
    return Dataset("no_symmetry", *parts, action=ActionSpec(d=5), truth=None, seed=seed)


TASKS = ("two_body", "discrete_rotation", "partial_permutation", "no_symmetry")
