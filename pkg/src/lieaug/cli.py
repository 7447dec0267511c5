"""Command-line entry point: ``lieaug {gen-data,train,eval,sweep,probe}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from . import metrics as mt
from . import probes
from .augmenter import ConfigError
from .config import TrainConfig, build_config, config_hash, load_config, output_dir, parse_overrides
from .datasets import Dataset
from .model import init_mlp
from .report import evaluate, flat_metrics, run_experiment, run_name
from .rng import stream
from .train import TrainedState, make_dataset, model_spec, predict_direct

DATA_FIELDS = ("task", "seed", "n_train", "n_val", "n_test", "timesteps_in", "timesteps_out", "ood", "k")

log = logging.getLogger("lieaug")


def data_key(cfg: TrainConfig) -> str:
    return f"{cfg.task}_{config_hash({k: getattr(cfg, k) for k in DATA_FIELDS})[:12]}"


def dataset_for(cfg: TrainConfig, root: Path) -> Dataset:
    """Load the cached dataset for this config, generating and caching it if absent."""
    path = root / "data" / f"{data_key(cfg)}.bin"
    if path.exists():
        return io.load_dataset(path)
    data = make_dataset(cfg)
    io.save_dataset(path, data)
    return data


def _config(args, extra) -> TrainConfig:
    overrides = parse_overrides(extra)
    if args.config:
        return load_config(args.config, overrides)
    return build_config({}, overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, extra) -> int:
    cfg = _config(args, extra)
    root = Path(args.out) if args.out else output_dir()
    path = root / "data" / f"{data_key(cfg)}.bin"
    data = make_dataset(cfg)
    io.save_dataset(path, data)
    print(json.dumps({"path": str(path), "sizes": data.sizes()}))
    return 0


def cmd_train(args, extra) -> int:
    cfg = _config(args, extra)
    root = Path(args.out) if args.out else output_dir()
    data = dataset_for(cfg, root)
    _, metrics, report = run_experiment(cfg, root / run_name(cfg), data, progress=args.verbose)
    summary = {"run_dir": str(Path(report.checkpoint).parent), "wall_clock_seconds": round(report.wall_clock_seconds, 2)}
    summary.update(flat_metrics(metrics))
    print(json.dumps(summary, indent=2))
    return 0


def load_run(run_dir: Path):
    report = json.loads((run_dir / "report.json").read_text())
    cfg = TrainConfig(**report["config"])
    params, basis, _ = io.load_checkpoint(run_dir / "checkpoint.bin")
    return cfg, params, basis


def state_from_run(run_dir: Path, data: Dataset | None = None) -> tuple[TrainedState, Dataset]:
    cfg, params, basis = load_run(run_dir)
    data = make_dataset(cfg) if data is None else data
    state = TrainedState(cfg, model_spec(cfg, data), data.action, params, basis, [], 0.0)
    return state, data


def cmd_eval(args, extra) -> int:
    run_dir = Path(args.run)
    root = Path(args.out) if args.out else output_dir()
    cfg, _, _ = load_run(run_dir)
    state, data = state_from_run(run_dir, dataset_for(cfg, root))
    metrics = evaluate(state, data)
    print(json.dumps(metrics, indent=2, default=float))
    return 0


def _sweep_one(payload):
    cfg_dict, root = payload
    cfg = TrainConfig(**cfg_dict)
    data = dataset_for(cfg, Path(root))
    state, metrics, report = run_experiment(cfg, Path(root) / run_name(cfg), data)
    gens = None if state.basis is None else state.basis.generators
    return cfg.seed, flat_metrics(metrics), gens


def cmd_sweep(args, extra) -> int:
    base = _config(args, extra)
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    if not seeds:
        raise ConfigError("need at least one seed")
    root = Path(args.out) if args.out else output_dir()
    payloads = [(replace(base, seed=s).to_dict(), str(root)) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_sweep_one, payloads))
    else:
        results = [_sweep_one(p) for p in payloads]
    rows = [{"seed": s, **m} for s, m, _ in results]
    numeric = sorted({k for r in rows for k, v in r.items() if isinstance(v, (int, float)) and k != "seed"})
    agg = []
    for stat, fn in (("mean", np.mean), ("std", np.std)):
        agg.append({"seed": stat, **{k: float(fn([r[k] for r in rows if k in r])) for k in numeric}})
    name = f"sweep_{base.task}_{base.mode}_{base.config_hash()[:10]}"
    columns = ["seed"] + numeric + sorted({k for r in rows for k in r} - set(numeric) - {"seed"})
    path = io.write_rows(root / f"{name}.csv", rows + agg, columns)
    out = {"csv": str(path), "mean": agg[0], "std": agg[1]}
    gens = [g for _, _, g in results if g is not None]
    if base.task == "no_symmetry" and gens:
        sig = mt.no_symmetry_signature(gens).as_dict()
        (root / f"{name}_signature.json").write_text(json.dumps(sig, indent=2))
        out["signature"] = sig
    print(json.dumps(out, indent=2))
    return 0


# ---------------------------------------------------------------------------
# probes


def probe_gradcheck(cfg, root, args) -> dict:
    errs = probes.gradient_checks(cfg.seed)
    errs["frechet"] = probes.frechet_check(cfg.seed)
    worst = max(errs.values())
    return {"max_rel_err": worst, "cases": errs, "passed": worst <= 1e-6}


def probe_expm(cfg, root, args) -> dict:
    ids = probes.expm_identities(cfg.seed)
    ok = ids["exp_zero"] == 0.0 and all(v <= 1e-10 for v in ids.values())
    return {"errors": ids, "passed": ok}


def probe_mcvariance(cfg, root, args) -> dict:
    """Variance of the equivariance-loss estimator for a frozen random predictor on two-body data."""
    cfg = replace(cfg, task="two_body", n_train=64, n_val=0, n_test=0)
    data = make_dataset(cfg)
    spec = model_spec(cfg, data)
    params = init_mlp(spec, stream(cfg.seed, "probe", "mc", "mlp"))
    x, y = data.x_train[:4], data.y_train[:4]
    res = mt.mc_variance_probe(
        lambda z: predict_direct(TrainedState(cfg, spec, data.action, params, None, [], 0.0), z),
        data.truth,
        x,
        y,
        [1, 2, 4, 8, 16, 32],
        args.trials,
        cfg.eval_sampler,
        data.action,
        stream(cfg.seed, "probe", "mc", "draws"),
    )
    ok = not res.degenerate and -1.15 <= res.slope <= -0.85
    return {**asdict(res), "passed": ok}


def probe_oodbound(cfg, root, args) -> dict:
    if args.run:
        state, data = state_from_run(Path(args.run))
    else:
        cfg = replace(cfg, task="two_body") if cfg.task != "two_body" else cfg
        data = dataset_for(cfg, root)
        state, _, _ = run_experiment(cfg, None, data)
    # angles over the whole circle, not just the training width
    group = mt.true_group(data.name, data.action.d, np.pi, state.config.k)
    if group is None:
        raise ConfigError(f"task {data.name!r} has no known symmetry group")
    res = mt.shift_bound_check(
        lambda z: predict_direct(state, z),
        group,
        data.x_test,
        data.y_test,
        data.action,
        50,
        stream(state.config.seed, "probe", "oodbound"),
    )
    return {
        "clean_risk": res.clean_risk,
        "lipschitz": res.lipschitz,
        "min_slack": min(res.slack),
        "violators": res.violators,
        "passed": res.holds,
    }


PROBES = {
    "gradcheck": probe_gradcheck,
    "expm": probe_expm,
    "mcvariance": probe_mcvariance,
    "oodbound": probe_oodbound,
}


def cmd_probe(args, extra) -> int:
    if args.probe not in PROBES:
        raise ConfigError(f"unknown probe {args.probe!r}; valid probes: {', '.join(PROBES)}")
    overrides = parse_overrides(extra)
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = build_config({"task": "two_body", **overrides})
    root = Path(args.out) if args.out else output_dir()
    result = PROBES[args.probe](cfg, root, args)
    print(json.dumps(result, indent=2, default=float))
    return 0 if result["passed"] else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lieaug", description="Learned Lie-algebra augmentation experiments.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", nargs="?", help="flat JSON config file; keys may also be given as --key=value")
        sp.add_argument("--out", help="output directory (default: $LIEAUG_OUTPUT_DIR or ./runs)")
        return sp

    with_config(sub.add_parser("gen-data", help="generate and cache a dataset"))
    tr = with_config(sub.add_parser("train", help="train, evaluate and write a run report"))
    tr.add_argument("-v", "--verbose", action="store_true", help="print per-epoch losses")
    ev = sub.add_parser("eval", help="re-evaluate a finished run directory")
    ev.add_argument("run")
    ev.add_argument("--out")
    sw = with_config(sub.add_parser("sweep", help="train one run per seed and aggregate"))
    sw.add_argument("--seeds", default="0,1,2")
    sw.add_argument("--jobs", type=int, default=1)
    pr = sub.add_parser("probe", help="numerical self-checks")
    pr.add_argument("probe", help=f"one of: {', '.join(PROBES)}")
    pr.add_argument("config", nargs="?")
    pr.add_argument("--out")
    pr.add_argument("--run", help="trained run directory (oodbound)")
    pr.add_argument("--trials", type=int, default=1000)
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "probe": cmd_probe}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, extra)
    except (ConfigError, io.FormatError, FileNotFoundError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
