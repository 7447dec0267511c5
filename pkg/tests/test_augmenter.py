import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lieaug import augmenter as aug
from lieaug import numkern as nk
from lieaug.datasets import two_body_truth
from lieaug.matexp import expm_node
from lieaug.numkern import ShapeError

R = np.array([[0.0, -1.0], [1.0, 0.0]])


def test_normalize_rescales_to_sqrt_d():
    gens, collapsed = aug.normalize_generators(np.array([[[0.0, -2.0], [2.0, 0.0]]]), 2.0)
    np.testing.assert_allclose(gens[0], R, atol=1e-15)
    assert collapsed == []


def test_normalize_reports_zero_generator():
    gens, collapsed = aug.normalize_generators(np.zeros((2, 3, 3)) + np.eye(3) * [[[0]], [[1]]], 3.0)
    assert collapsed == [0]
    assert not np.any(gens[0])
    assert np.sum(gens[1] ** 2) == pytest.approx(3.0)


def test_init_basis_respects_mask():
    mask = aug.two_body_mask("mask_2")
    b = aug.init_basis(2, 8, mask, 0.5)
    assert b.generators.shape == (2, 8, 8)
    assert np.all(b.generators[:, ~mask] == 0) and np.all(b.generators[:, mask] == 0.5)
    assert b.d_norm == 8.0
    with pytest.raises(aug.ConfigError):
        aug.init_basis(0, 3)
    with pytest.raises(aug.ConfigError):
        aug.init_basis(1, 3, np.ones((2, 2)))


def test_two_body_masks():
    m0, m2, m4 = (aug.two_body_mask(f"mask_{i}") for i in (0, 2, 4))
    assert m0.sum() == 64 and m2.sum() == 16 and m4.sum() == 32
    truth = two_body_truth()[0]
    for m in (m0, m2, m4):
        assert np.all(truth[~m] == 0)
    with pytest.raises(aug.ConfigError):
        aug.two_body_mask("mask_3")


def test_sampler_ranges(rng):
    w = aug.sample_coefficients(aug.SamplerConfig(2.0), 5000, 3, rng)
    assert w.shape == (5000, 3) and np.all(np.abs(w) <= 2.0)
    wi = aug.sample_coefficients(aug.SamplerConfig(3.0, "integer"), 5000, 1, rng)
    assert set(np.unique(wi)) == {-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0}
    for bad in (0.0, -1.0, np.inf):
        with pytest.raises(aug.ConfigError):
            aug.SamplerConfig(bad)
    with pytest.raises(aug.ConfigError):
        aug.SamplerConfig(1.0, "gaussian")


def test_group_sample_rotation():
    s = aug.group_sample(R[None], np.array([np.pi / 2]))
    np.testing.assert_allclose(s.g, R, atol=1e-15)
    np.testing.assert_allclose(s.g @ s.g_inv, np.eye(2), atol=1e-15)


def test_block_apply_per_timestep(rng):
    x = rng.standard_normal((4, 6))
    g = aug.group_sample(R[None], np.array([0.3])).g
    out = aug.block_apply(g, x, 2)
    for t in range(3):
        np.testing.assert_allclose(out[:, 2 * t : 2 * t + 2], x[:, 2 * t : 2 * t + 2] @ g.T, atol=1e-15)
    with pytest.raises(ShapeError):
        aug.block_apply(g, np.ones(5), 2)


def test_actions_invariant_vs_equivariant(rng):
    s = aug.group_sample(R[None], np.array([0.7]))
    y = rng.standard_normal((3, 2))
    inv = aug.ActionSpec(2)
    eqv = aug.ActionSpec(2, output_action="equivariant")
    np.testing.assert_array_equal(aug.act_output(s, y, inv), y)
    np.testing.assert_allclose(aug.inverse_act_output(s, aug.act_output(s, y, eqv), eqv), y, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_group_law_one_parameter(a, b):
    ga = aug.group_sample(R[None], np.array([a])).g
    gb = aug.group_sample(R[None], np.array([b])).g
    gab = aug.group_sample(R[None], np.array([a + b])).g
    np.testing.assert_allclose(ga @ gb, gab, atol=1e-12)


def test_normalize_node_matches_array_version_and_gradcheck(rng):
    V = rng.standard_normal((2, 3, 3))
    t = nk.Tape()
    np.testing.assert_allclose(aug.normalize_node(t.constant(V), 3.0).value, aug.normalize_generators(V, 3.0)[0])
    with pytest.raises(ShapeError):
        aug.normalize_node(t.constant(np.zeros((1, 2, 2))), 2.0)
    s = nk.ParamStore()
    s.add("V", V)
    s.add("W", rng.standard_normal((2, 3, 3)), trainable=False)
    assert nk.gradcheck(lambda t, n: nk.sum(nk.mul(aug.normalize_node(n["V"], 3.0), n["W"])), s) <= 1e-7


def test_generator_gradient_through_action(rng):
    s = nk.ParamStore()
    s.add("L", rng.standard_normal((2, 4, 4)) * 0.3)
    w = rng.uniform(-1, 1, size=(6, 2))
    x = rng.standard_normal((6, 8))
    mask = rng.random((4, 4)) < 0.7

    def build(t, n):
        g = expm_node(aug.lie_element_node(w, aug.masked_node(n["L"], mask)))
        return nk.sum(nk.smooth_abs(aug.block_apply_node(g, x, 4)))

    assert nk.gradcheck(build, s) <= 1e-5
