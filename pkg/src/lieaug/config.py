"""Flat run configuration, per-task presets, overrides and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .augmenter import ConfigError, SamplerConfig
from .datasets import TASKS
from .objective import LossWeights

MODES = ("lieaugmenter", "trivial", "oracle-aug", "fixed-aug")
OUTPUT_ENV = "LIEAUG_OUTPUT_DIR"


@dataclass
class TrainConfig:
    task: str = "two_body"
    mode: str = "lieaugmenter"
    seed: int = 0
    # objective
    alpha: float = 1.0
    beta: float = 10.0
    lam: float = 1.0
    eta: float = 0.0
    nu: float = 1e-3
    K: int = 10
    # generators and sampling
    C: int = 1
    gamma: float = 2.0
    sampler: str = "continuous"
    mask: str = "mask_2"
    init_value: float = 1e-2
    d_norm: float | None = None
    normalization: str = "reparam"
    fixed_generators: list[str] = field(default_factory=list)
    # optimisation
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    hidden: list[int] = field(default_factory=lambda: [128, 128, 128])
    activation: str = "relu"
    # data
    n_train: int | None = None
    n_val: int | None = None
    n_test: int | None = None
    timesteps_in: int = 1
    timesteps_out: int = 1
    ood: bool = False
    k: int = 6
    # evaluation
    eval_K: int = 10
    eval_gamma: float | None = None
    eval_items: int = 2000

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; valid tasks: {', '.join(TASKS)}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; valid modes: {', '.join(MODES)}")
        if self.mode == "trivial":
            self.K = 0
        if self.mode == "fixed-aug" and not self.fixed_generators:
            raise ConfigError("mode 'fixed-aug' needs fixed_generators (list of CSV paths)")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")
        if self.K < 0 or self.C < 1:
            raise ConfigError("need K >= 0 and C >= 1")
        if self.normalization not in ("projection", "reparam"):
            raise ConfigError(f"normalization must be 'projection' or 'reparam', got {self.normalization!r}")
        self.hidden = [int(h) for h in self.hidden]
        self.weights  # validates signs
        self.sampler_config

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.lam, self.eta, self.nu, self.K)

    @property
    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.gamma, self.sampler)

    @property
    def eval_sampler(self) -> SamplerConfig:
        return SamplerConfig(self.gamma if self.eval_gamma is None else self.eval_gamma, "continuous")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return config_hash(self.to_dict())


# Per-task hyperparameters; anything not listed falls back to the dataclass defaults.
PRESETS: dict[str, dict] = {
    "two_body": dict(alpha=1.0, beta=10.0, lam=1.0, eta=0.0, nu=1e-3, gamma=2.0, K=10, C=1, epochs=100, batch_size=64, mask="mask_2"),
    "no_symmetry": dict(alpha=1.0, beta=1.0, lam=0.1, eta=0.0, nu=0.1, gamma=5.0, K=10, C=1, epochs=25, batch_size=64, mask="full"),
    "discrete_rotation": dict(alpha=1.0, beta=5.0, lam=0.1, eta=0.0, nu=1e-3, gamma=3.0, K=10, C=1, epochs=20, batch_size=64, mask="full", sampler="integer"),
    "partial_permutation": dict(alpha=1.0, beta=5.0, lam=0.1, eta=0.0, nu=1e-3, gamma=3.0, K=10, C=1, epochs=20, batch_size=64, mask="full", sampler="integer"),
}


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def _field_types() -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, raw: str):
    """Parse a command-line override using the type of the field's default."""
    f = _field_types()[name]
    default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    text = raw.strip()
    if text.lower() in ("none", "null"):
        return None
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, list):
        if text.startswith("["):
            return json.loads(text)
        items = [t for t in text.split(",") if t]
        return [int(t) for t in items] if name == "hidden" else items
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or name in ("d_norm", "eval_gamma"):
        return float(text)
    if name in ("n_train", "n_val", "n_test"):
        return int(text)
    return text


def parse_overrides(args: list[str]) -> dict:
    out = {}
    fields = _field_types()
    for a in args:
        if not a.startswith("--") or "=" not in a:
            raise ConfigError(f"override {a!r} must look like --key=value")
        key, value = a[2:].split("=", 1)
        key = key.replace("-", "_")
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def build_config(raw: dict | None = None, overrides: dict | None = None) -> TrainConfig:
    """Preset for the task, then the file contents, then command-line overrides."""
    raw = dict(raw or {})
    overrides = dict(overrides or {})
    if "task" not in raw and "task" not in overrides:
        raise ConfigError("missing config key 'task'")
    task = overrides.get("task", raw.get("task"))
    if task not in PRESETS:
        raise ConfigError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}")
    fields = _field_types()
    merged = dict(PRESETS[task])
    for src in (raw, overrides):
        for k, v in src.items():
            if k not in fields:
                raise ConfigError(f"unknown config key {k!r}")
            merged[k] = v
    return TrainConfig(**merged)


def load_config(path: str | os.PathLike, overrides: dict | None = None) -> TrainConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return build_config(raw, overrides)


def output_dir(default: str | os.PathLike = "runs") -> Path:
    return Path(os.environ.get(OUTPUT_ENV, default))
