import numpy as np
import pytest

from lieaug import augmenter as aug
from lieaug import datasets as ds
from lieaug import io
from lieaug.config import build_config
from lieaug.numkern import ParamStore
from lieaug.report import LOSS_COLUMNS, run_experiment
from lieaug.rng import stream
from lieaug.train import (
    AdamState,
    TrainingError,
    adam_step,
    augmented_average,
    fit,
    make_dataset,
    predict_augmented,
    predict_direct,
)

SMALL = dict(n_train=256, n_val=32, n_test=64, epochs=2, hidden=[16, 16], eval_items=32, eval_K=3)


def small(task="two_body", **kw):
    return build_config({"task": task, **SMALL, **kw})


def test_adam_first_step_moves_by_lr():
    store = ParamStore()
    store.add("p", np.array([1.0, -1.0]))
    adam_step(store, {"p": np.array([0.5, -3.0])}, AdamState(), lr=0.1)
    np.testing.assert_allclose(store["p"], [0.9, -0.9], rtol=1e-6)


def test_adam_minimises_quadratic():
    store = ParamStore()
    store.add("p", np.array([3.0, -2.0]))
    state = AdamState()
    for _ in range(2000):
        adam_step(store, {"p": 2 * store["p"]}, state, lr=0.05)
    assert np.max(np.abs(store["p"])) < 1e-3


@pytest.mark.parametrize("mode", ["lieaugmenter", "trivial", "oracle-aug"])
def test_fit_modes_run_and_record_history(mode):
    cfg = small(mode=mode)
    state = fit(cfg, make_dataset(cfg))
    assert len(state.history) == 2
    assert all(np.isfinite(r.losses.total) for r in state.history)
    if mode == "trivial":
        assert state.basis is None and state.history[-1].losses.equiv == 0.0
    else:
        assert np.sum(state.basis.generators**2) == pytest.approx(8.0)
    if mode == "oracle-aug":
        np.testing.assert_array_equal(state.basis.generators, ds.two_body_truth())
    if mode == "lieaugmenter":
        assert np.all(state.basis.generators[0][~aug.two_body_mask("mask_2")] == 0)
        assert "generators" not in state.params


def test_projection_normalization_keeps_norm():
    cfg = small(normalization="projection")
    state = fit(cfg, make_dataset(cfg))
    assert np.sum(state.basis.generators**2) == pytest.approx(8.0)


def test_fixed_aug_reads_csv(tmp_path):
    paths = io.write_generators(ds.two_body_truth(), tmp_path)
    cfg = small(mode="fixed-aug", fixed_generators=[str(p) for p in paths])
    state = fit(cfg, make_dataset(cfg))
    np.testing.assert_array_equal(state.basis.generators, ds.two_body_truth())


def test_fixed_aug_wrong_size(tmp_path):
    paths = io.write_generators(np.zeros((1, 3, 3)), tmp_path)
    cfg = small(mode="fixed-aug", fixed_generators=[str(p) for p in paths])
    with pytest.raises(aug.ConfigError):
        fit(cfg, make_dataset(cfg))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_aborts_with_generator_norms():
    cfg = small(lr=1e300)
    with pytest.raises(TrainingError, match="generator norms"):
        fit(cfg, make_dataset(cfg))


def test_same_seed_bitwise_identical():
    cfg = small()
    data = make_dataset(cfg)
    a, b = fit(cfg, data), fit(cfg, data)
    np.testing.assert_array_equal(a.basis.generators, b.basis.generators)
    np.testing.assert_array_equal(a.params.flat(), b.params.flat())


def test_augmented_prediction_with_exact_target_equals_direct():
    cfg = ds.TwoBodyConfig(n_train=64, n_val=8, n_test=64)
    data = ds.gen_two_body(cfg, 0)

    def psi(z):
        return ds.two_body_step(z, cfg)

    direct = psi(data.x_test)
    avg = augmented_average(psi, data.truth, data.x_test, 10, data.action, aug.SamplerConfig(2.0), stream(0, "t"), chunk=16)
    assert np.max(np.abs(avg - direct)) <= 1e-9


def test_predict_augmented_without_basis_is_direct():
    cfg = small(mode="trivial")
    data = make_dataset(cfg)
    state = fit(cfg, data)
    np.testing.assert_array_equal(
        predict_augmented(state, data.x_test, 10, cfg.sampler_config, stream(0, "x")), predict_direct(state, data.x_test)
    )


@pytest.mark.parametrize("task", ["discrete_rotation", "partial_permutation", "no_symmetry"])
def test_other_tasks_train(task):
    cfg = small(task, n_train=128, epochs=1)
    _, metrics, _ = run_experiment(cfg)
    assert np.isfinite(metrics["mse_direct"])
    if task != "no_symmetry":
        assert "equiv_error" in metrics and "basis" in metrics
    assert 0 < metrics["signature"]["mass_fraction"][0] <= 1


def test_run_artifacts(tmp_path):
    cfg = small()
    state, metrics, report = run_experiment(cfg, tmp_path / "run")
    rows = io.read_rows(report.loss_csv)
    assert list(rows[0]) == LOSS_COLUMNS and len(rows) == cfg.epochs
    assert len(report.generator_csvs) == 1
    np.testing.assert_array_equal(io.read_generators(report.generator_csvs), state.basis.generators)
    params, basis, man = io.load_checkpoint(report.checkpoint)
    np.testing.assert_array_equal(params.flat(), state.params.flat())
    assert man["config_hash"] == cfg.config_hash()
    assert (tmp_path / "run" / "report.json").exists()
    assert {"mse_direct", "mse_augmented", "equiv_error", "equiv_error_alt", "basis", "alternative_rep"} <= set(metrics)
