"""Evaluate trained runs and write their artefacts."""

from __future__ import annotations

import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from . import metrics as mt
from .config import TrainConfig
from .datasets import Dataset
from .rng import stream
from .train import TrainedState, fit, make_dataset, mse, predict_augmented, predict_direct

LOSS_COLUMNS = ["epoch", "emp", "equiv", "areg", "bsreg", "bcreg", "total", "val_mse"]


@dataclass
class RunReport:
    config: dict
    config_hash: str
    seed: int
    loss_csv: str
    metrics_csv: str
    checkpoint: str
    generator_csvs: list[str]
    metrics: dict
    wall_clock_seconds: float
    collapsed_generators: list[int] = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate(state: TrainedState, data: Dataset) -> dict:
    """Test metrics for a trained state; every random draw comes from the run seed."""
    cfg = state.config
    seed = cfg.seed
    x, y = data.x_test, data.y_test
    out = {
        "mse_direct": mse(predict_direct(state, x), y),
        "mse_augmented": mse(
            predict_augmented(state, x, cfg.K if state.basis is not None else 0, cfg.sampler_config, stream(seed, "eval", "augmented")),
            y,
        ),
        "inference_K": cfg.K if state.basis is not None else 0,
    }
    gamma = cfg.eval_sampler.gamma
    group = mt.true_group(data.name, data.action.d, gamma, cfg.k)
    if group is not None:
        xs = x[: cfg.eval_items]

        def psi(z):
            return predict_direct(state, z)

        out["equiv_error"] = mt.equivariance_error(psi, group, xs, cfg.eval_K, data.action, stream(seed, "eval", "equiv"))
        out["equiv_error_alt"] = mt.equivariance_error_alt(psi, group, xs, cfg.eval_K, data.action, stream(seed, "eval", "equiv"))
    if state.basis is not None and data.truth is not None and state.learned:
        out["basis"] = mt.basis_cosine_similarity(state.basis.generators, data.truth).as_dict()
    if state.basis is not None and data.name == "two_body" and state.learned:
        alt = mt.alternative_rep_check(state.basis.generators[0])
        out["alternative_rep"] = asdict(alt)
    if state.basis is not None and state.learned:
        out["signature"] = mt.no_symmetry_signature([state.basis]).as_dict()
    return out


def flat_metrics(metrics: dict) -> dict:
    """One CSV row: scalars only, nested reports reduced to their headline numbers."""
    row = {k: v for k, v in metrics.items() if isinstance(v, (int, float))}
    if "basis" in metrics:
        row["basis_mean_abs_cos"] = metrics["basis"]["mean_abs_cos"]
        row["basis_mean_projection"] = metrics["basis"]["mean_projection"]
    if "alternative_rep" in metrics:
        row["alternative_rep_passed"] = int(metrics["alternative_rep"]["passed"])
        row["alternative_rep_error"] = metrics["alternative_rep"]["max_error"]
    if "signature" in metrics:
        row["top_entry_mass_fraction"] = metrics["signature"]["mass_fraction"][0]
        row["top_entry"] = "-".join(str(i) for i in metrics["signature"]["top_entry"][0])
    return row


def run_name(cfg: TrainConfig) -> str:
    return f"{cfg.task}_{cfg.mode}_s{cfg.seed}_{cfg.config_hash()[:10]}"


def write_run(state: TrainedState, data: Dataset, out_dir: Path, metrics: dict | None = None) -> RunReport:
    cfg = state.config
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = evaluate(state, data) if metrics is None else metrics
    loss_csv = io.write_rows(out_dir / "loss.csv", [r.row() for r in state.history], LOSS_COLUMNS)
    metrics_csv = io.write_rows(out_dir / "metrics.csv", [{"run": run_name(cfg), **flat_metrics(metrics)}])
    manifest = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "spec": asdict(state.spec)}
    ckpt = io.save_checkpoint(out_dir / "checkpoint.bin", state.params, state.basis, manifest)
    gens = []
    if state.basis is not None:
        gens = [str(p) for p in io.write_generators(state.basis.generators, out_dir / "generators")]
    report = RunReport(
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        loss_csv=str(loss_csv),
        metrics_csv=str(metrics_csv),
        checkpoint=str(ckpt),
        generator_csvs=gens,
        metrics=metrics,
        wall_clock_seconds=state.wall_clock,
        collapsed_generators=[] if state.basis is None else list(state.basis.collapsed),
        environment={"python": platform.python_version(), "numpy": np.__version__},
    )
    (out_dir / "report.json").write_text(report.to_json())
    return report


def run_experiment(cfg: TrainConfig, out_dir: Path | None = None, data: Dataset | None = None, progress: bool = False):
    """Generate data, train, evaluate and (optionally) write every artefact."""
    data = make_dataset(cfg) if data is None else data
    state = fit(cfg, data, progress=progress)
    metrics = evaluate(state, data)
    report = write_run(state, data, out_dir, metrics) if out_dir is not None else None
    return state, metrics, report
