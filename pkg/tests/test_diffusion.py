import numpy as np
import pytest
from hypothesis import given, strategies as st

from darse.central import cost
from darse.diffusion import DEFAULT_STEP_SCALES, DiffusionConfig, diffusion_round, diffusion_snapshot
from darse.gossip import complete_overlay, synchronous_weight_matrix
from darse.measurement import NoiseSpec, SelectionMask, partition_areas, select_measurements, synthesize_snapshot
from darse.power_flow import EnsembleLayout, evaluate_f, jacobian

from conftest import random_grid, random_state


def _problem(rng, I=3):
    g = random_grid(rng, 5, 3)
    masks = select_measurements(g, partition_areas(5, I), 0.8)
    snap = synthesize_snapshot(g, random_state(rng, 5), masks, NoiseSpec(1e-2))
    gam = [np.full(m.size, 1e-4) for m in masks]
    return g, masks, snap, gam


def test_default_step_scales():
    assert DEFAULT_STEP_SCALES == (0.01, 0.3, 0.5, 1.0)
    assert DiffusionConfig(0.3).step(4) == pytest.approx(0.075)
    with pytest.raises(ValueError):
        DiffusionConfig(0.0)


def test_zero_step_identity_weights_unchanged(rng):
    g, masks, snap, gam = _problem(rng)
    V = rng.uniform(-1, 1, (3, 10))
    out = diffusion_round(V, np.eye(3), g, masks, snap.c, gam, 0.0)
    np.testing.assert_array_equal(out, V)


@given(st.integers(0, 1000))
def test_zero_step_conserves_mean(seed):
    r = np.random.default_rng(seed)
    g = random_grid(r, 3, 1)
    masks = select_measurements(g, partition_areas(3, 3), 1.0)
    W = synchronous_weight_matrix(complete_overlay(3), r.uniform(0.05, 0.95))
    V = r.uniform(-1, 1, (3, 6))
    out = diffusion_round(V, W, g, masks, [np.zeros(m.size) for m in masks], [np.ones(m.size) for m in masks], 0.0)
    np.testing.assert_allclose(out.mean(0), V.mean(0), atol=1e-14)


def test_round_matches_formula(rng):
    g, masks, snap, gam = _problem(rng)
    V = rng.uniform(-1, 1, (3, 10))
    W = synchronous_weight_matrix(complete_overlay(3), 0.5)
    out = diffusion_round(V, W, g, masks, snap.c, gam, 1e-6)
    for i in range(3):
        m = masks[i]
        s = 1 / np.sqrt(gam[i])
        F = jacobian(g, V[i], m.rows) * s[:, None]
        grad = F.T @ ((snap.c[i] - evaluate_f(g, V[i], m.rows)) * s)
        np.testing.assert_allclose(out[i], np.clip(W[i] @ V + 1e-6 * grad, -1.5, 1.5), atol=1e-12)


def test_single_agent_pmu_only_monotone_toward_ls(rng):
    g = random_grid(rng, 4, 2)
    lay = EnsembleLayout.of(g)
    mask = SelectionMask(0, np.arange(lay.quadratic.start), lay)
    c = evaluate_f(g, random_state(rng, 4), mask.rows) + 0.01 * rng.standard_normal(mask.size)
    gam = [np.ones(mask.size)]
    A = jacobian(g, np.zeros(8), mask.rows)
    v_ls = np.linalg.lstsq(A, c, rcond=None)[0]
    # below 1/||A||^2 the gradient step is a contraction on the quadratic cost
    a0 = 0.9 / np.linalg.norm(A, 2) ** 2
    snap = type("S", (), {"c": [c]})()
    V, cps = diffusion_snapshot(g, [mask], snap, gam, np.eye(1), [np.zeros(8)], DiffusionConfig(a0, 300, 1.5))
    costs = [cost(g, [mask], [c], gam, X[0]) for _, X in cps]
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))
    assert np.linalg.norm(V[0] - v_ls) < np.linalg.norm(v_ls)
    assert costs[-1] < costs[0]
