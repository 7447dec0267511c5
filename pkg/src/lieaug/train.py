"""Joint training of the predictor and the generator basis, baselines and inference."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import augmenter as aug
from . import datasets as ds
from . import numkern as nk
from .config import TrainConfig
from .model import MlpSpec, init_mlp, mlp_forward, mlp_predict
from .numkern import ParamStore
from .objective import TERMS, LossBreakdown, batch_objective
from .rng import stream

log = logging.getLogger(__name__)

GEN_KEY = "generators"


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ParamStore,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    t: int | None = None,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update applied in place to every parameter that has a gradient."""
    b1, b2 = betas
    state.t = state.t + 1 if t is None else t
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# data and model setup


def make_dataset(cfg: TrainConfig) -> ds.Dataset:
    def sizes(defaults):
        return tuple(d if v is None else v for v, d in zip((cfg.n_train, cfg.n_val, cfg.n_test), defaults))

    if cfg.task == "two_body":
        base = ds.TwoBodyConfig()
        n_train, n_val, n_test = sizes((base.n_train, base.n_val, base.n_test))
        tb = ds.TwoBodyConfig(
            n_train=n_train,
            n_val=n_val,
            n_test=n_test,
            timesteps_in=cfg.timesteps_in,
            timesteps_out=cfg.timesteps_out,
            ood=cfg.ood,
        )
        return ds.gen_two_body(tb, cfg.seed)
    if cfg.task == "discrete_rotation":
        return ds.gen_discrete_rotation(cfg.k, sizes((54000, 6000, 10000)), cfg.seed)
    if cfg.task == "partial_permutation":
        return ds.gen_partial_permutation(sizes((54000, 6000, 10000)), cfg.seed)
    if cfg.task == "no_symmetry":
        return ds.gen_no_symmetry(sizes((50000, 10000, 10000)), cfg.seed)
    raise aug.ConfigError(f"unknown task {cfg.task!r}")


def resolve_mask(cfg: TrainConfig, d: int) -> np.ndarray:
    if cfg.mask in ("full", "none"):
        return aug.full_mask(d)
    if cfg.task == "two_body":
        return aug.two_body_mask(cfg.mask)
    if cfg.mask == "mask_0":
        return aug.full_mask(d)
    raise aug.ConfigError(f"mask {cfg.mask!r} is only defined for the two_body task")


def model_spec(cfg: TrainConfig, data: ds.Dataset) -> MlpSpec:
    return MlpSpec(data.n, data.m, tuple(cfg.hidden), cfg.activation)


def initial_basis(cfg: TrainConfig, data: ds.Dataset) -> aug.GeneratorBasis | None:
    """Starting generators for each mode; ``None`` when no augmentation is used."""
    d = data.action.d
    if cfg.mode == "trivial":
        return None
    if cfg.mode == "oracle-aug":
        if data.truth is None:
            raise aug.ConfigError(f"task {cfg.task!r} has no ground-truth generators for oracle mode")
        return aug.GeneratorBasis(data.truth.copy(), aug.full_mask(d), d_norm=cfg.d_norm)
    if cfg.mode == "fixed-aug":
        from .io import read_generators

        gens = read_generators(cfg.fixed_generators)
        if gens.shape[1:] != (d, d):
            raise aug.ConfigError(f"fixed generators have shape {gens.shape}, task needs ({d}, {d})")
        return aug.GeneratorBasis(gens, aug.full_mask(d), d_norm=cfg.d_norm)
    basis = aug.init_basis(cfg.C, d, resolve_mask(cfg, d), cfg.init_value, cfg.d_norm)
    return basis if cfg.normalization == "reparam" else aug.normalize_basis(basis)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    val_mse: float

    def row(self) -> dict[str, float]:
        return {"epoch": self.epoch, **self.losses.as_dict(), "val_mse": self.val_mse}


@dataclass
class TrainedState:
    config: TrainConfig
    spec: MlpSpec
    action: aug.ActionSpec
    params: ParamStore
    basis: aug.GeneratorBasis | None
    history: list[EpochRecord]
    wall_clock: float

    @property
    def learned(self) -> bool:
        return self.config.mode == "lieaugmenter"


def mse(yhat: np.ndarray, y: np.ndarray) -> float:
    """Mean over every output component."""
    return float(np.mean((np.asarray(yhat) - np.asarray(y)) ** 2))


def _nan_report(losses: dict[str, float], store: ParamStore) -> str:
    parts = [f"{k}={v:.4g}" for k, v in losses.items()]
    if GEN_KEY in store.values:
        norms = np.sqrt(np.einsum("cij,cij->c", store[GEN_KEY], store[GEN_KEY]))
        parts.append(f"generator norms={np.array2string(norms, precision=4)}")
    return ", ".join(parts)


def fit(cfg: TrainConfig, data: ds.Dataset, progress: bool = False) -> TrainedState:
    t0 = time.perf_counter()
    spec = model_spec(cfg, data)
    action = data.action
    x_train, y_train = data.x_train, data.y_train
    if x_train.shape[1] != action.n:
        raise aug.ConfigError(f"input width {x_train.shape[1]} does not match action width {action.n}")

    store = init_mlp(spec, stream(cfg.seed, "init", "mlp"))
    basis = initial_basis(cfg, data)
    learn = cfg.mode == "lieaugmenter"
    reparam = learn and cfg.normalization == "reparam"
    if learn:
        store.add(GEN_KEY, basis.generators)
    weights = cfg.weights
    use_aug = basis is not None and weights.K > 0
    mask = basis.mask.astype(np.float64) if basis is not None else None
    sampler = cfg.sampler_config
    mlp_names = spec.param_names()

    def psi(params):
        return lambda x: mlp_forward(params, x, spec)

    adam = AdamState()
    history: list[EpochRecord] = []
    N, B = x_train.shape[0], cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        order = stream(cfg.seed, "shuffle", epoch).permutation(N)
        wrng = stream(cfg.seed, "augment", epoch)
        sums = dict.fromkeys(TERMS + ("total",), 0.0)
        for start in range(0, N, B):
            idx = order[start : start + B]
            xb, yb = x_train[idx], y_train[idx]
            tape = nk.Tape()
            nodes = tape.params(store, mlp_names)
            gens = None
            w = None
            if basis is not None:
                if learn:
                    gens = aug.masked_node(tape.param(GEN_KEY, store[GEN_KEY]), mask)
                    if reparam:
                        gens = aug.normalize_node(gens, basis.d_norm)
                else:
                    gens = tape.constant(basis.generators)
                if use_aug:
                    w = aug.sample_coefficients(sampler, len(idx) * weights.K, basis.C, wrng)
            total, terms = batch_objective(psi(nodes), gens, xb, yb, w, action, weights, tape)
            values = {k: float(terms[k].value) for k in TERMS}
            values["total"] = float(total.value)
            if not np.isfinite(values["total"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}: {_nan_report(values, store)}")
            grads = tape.backward(total)
            adam_step(store, grads, adam, cfg.lr)
            if learn and reparam:
                store[GEN_KEY] = store[GEN_KEY] * mask
            elif learn:
                gen, collapsed = aug.normalize_generators(store[GEN_KEY] * mask, basis.d_norm)
                store[GEN_KEY] = gen
                if collapsed:
                    basis.collapsed = sorted(set(basis.collapsed) | set(collapsed))
            for k, v in values.items():
                sums[k] += v * len(idx)
        losses = LossBreakdown(**{k: v / N for k, v in sums.items()})
        val = mse(mlp_predict(store, data.x_val, spec), data.y_val) if data.x_val.shape[0] else float("nan")
        history.append(EpochRecord(epoch, losses, val))
        msg = f"epoch {epoch:3d} total={losses.total:.4e} emp={losses.emp:.4e} equiv={losses.equiv:.4e} val_mse={val:.4e}"
        log.info(msg)
        if progress:
            print(msg, flush=True)

    if learn:
        final = store[GEN_KEY] * mask
        if reparam:
            final, collapsed = aug.normalize_generators(final, basis.d_norm)
        basis = replace(basis, generators=final)
        mlp_store = ParamStore()
        for n in mlp_names:
            mlp_store.add(n, store[n])
        store = mlp_store
    return TrainedState(cfg, spec, action, store, basis, history, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# inference


def predict_direct(state: TrainedState, x: np.ndarray) -> np.ndarray:
    return mlp_predict(state.params, x, state.spec)


def predict_augmented(
    state: TrainedState,
    x: np.ndarray,
    K: int,
    sampler: aug.SamplerConfig,
    rng: np.random.Generator,
    chunk: int = 2048,
) -> np.ndarray:
    """Average of the direct prediction and K back-transformed predictions on transformed inputs."""
    return augmented_average(
        lambda z: predict_direct(state, z),
        None if state.basis is None else state.basis.generators,
        x,
        K,
        state.action,
        sampler,
        rng,
        chunk,
    )


def augmented_average(psi, generators, x, K, action, sampler, rng, chunk: int = 2048) -> np.ndarray:
    x = nk.as_tensor(x)
    direct = psi(x)
    if K == 0 or generators is None:
        return direct
    out = np.empty_like(direct)
    C = generators.shape[0]
    for s in range(0, x.shape[0], chunk):
        xc = x[s : s + chunk]
        n = xc.shape[0]
        w = aug.sample_coefficients(sampler, n * K, C, rng)
        sample = aug.group_sample(generators, w)
        preds = psi(aug.act_input(sample, np.repeat(xc, K, axis=0), action))
        back = aug.inverse_act_output(sample, preds, action).reshape(n, K, -1)
        out[s : s + n] = (direct[s : s + n] + back.sum(axis=1)) / (K + 1)
    return out
