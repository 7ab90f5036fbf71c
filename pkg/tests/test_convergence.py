import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from darse.central import CovarianceEstimate
from darse.convergence import (ConvergenceConstants, ScheduleOverflow, UnobservableWarning, analyze, box_sampler,
                               condition3_schedule, corollary1_constants, estimate_condition2,
                               perturbation_sampler, theorem1_bounds)
from darse.grid import Bus, GridModel, Line
from darse.measurement import SelectionMask, partition_areas, select_measurements
from darse.power_flow import EnsembleLayout, jacobian

from conftest import random_grid, random_state, two_bus


def _base(**kw):
    d = dict(eps_min=1.0, eps_max=10.0, sigma_min=2.0, sigma_max=5.0, omega=0.5, I=2, L=1, N=3)
    d.update(kw)
    return ConvergenceConstants(**d)


def test_lipschitz_constants_arithmetic():
    assert corollary1_constants(1, 2, 3) == (5, 6)
    assert corollary1_constants(0, 2, 3) == (0, 0)
    with pytest.raises(ValueError):
        corollary1_constants(-1, 2, 3)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3))
def test_lipschitz_constants_match_reevaluation(w, e, s):
    nd, nD = corollary1_constants(w, e, s)
    assert nd == w * e + w * s or math.isclose(nd, w * (e + s), rel_tol=1e-15)
    assert nD == 2 * s * w


def test_lambda_eta_half_two_agents():
    c = condition3_schedule(0.5, 2, 1, 0.25, _base())
    assert c.lambda_eta == pytest.approx(math.sqrt(0.75), rel=1e-15)
    assert c.eta == 0.5


def test_schedule_matches_direct_formulas():
    b = _base(I=3, L=2, N=4)
    c = condition3_schedule(0.3, 3, 2, 0.1, b, rule="increment")
    eta, IL = 0.3, 6
    lam = (1 - eta ** IL) ** (1 / IL)
    lam_inf = 1 / (1 - lam)
    nu = max(b.omega * (b.eps_max + b.sigma_max), 2 * b.sigma_max * b.omega)
    C = 2 * 3 * b.sigma_max * math.sqrt(3 * (b.eps_max ** 2 + 4 * b.sigma_max ** 2)) \
        * (1 + eta ** -IL) / (1 - eta ** IL)
    C1 = 2 * (1 + b.sigma_max * b.eps_max / b.sigma_min ** 2)
    C2 = 3 / b.sigma_min ** 2
    D = C * C2 * (nu * lam_inf * C1 * C2 + 1)
    assert c.lambda_eta == pytest.approx(lam, rel=1e-12)
    assert c.C == pytest.approx(C, rel=1e-12)
    assert c.D == pytest.approx(D, rel=1e-9)
    assert c.ell_star == math.ceil(math.log(0.1 / (4 * D)) / math.log(lam))
    k = condition3_schedule(0.3, 3, 2, 0.1, b, rule="constant", K=20)
    assert k.lambda_inf == 21


def test_ell_star_decreases_with_looser_xi():
    b = _base()
    tight = condition3_schedule(0.5, 2, 1, 0.01, b).ell_star
    loose = condition3_schedule(0.5, 2, 1, 0.4, b).ell_star
    assert tight > loose


def test_xi_and_rule_validation():
    for xi in (0.0, 0.5, 0.7):
        with pytest.raises(ValueError):
            condition3_schedule(0.5, 2, 1, xi, _base())
    with pytest.raises(ValueError):
        condition3_schedule(0.5, 2, 1, 0.2, _base(), rule="constant")


def test_small_beta_overflows():
    with pytest.raises(ScheduleOverflow):
        condition3_schedule(1e-9, 4, 2, 0.25, _base())


def test_kappa_ratio_per_extra_exchange():
    c = condition3_schedule(0.4, 2, 1, 0.2, _base())
    a = theorem1_bounds(c, 30)["kappa"]
    b = theorem1_bounds(c, 31)["kappa"]
    assert b / a == pytest.approx(c.lambda_eta, rel=1e-12)


def test_bound_formulas_and_zero_omega():
    c = condition3_schedule(0.5, 2, 1, 0.25, _base())
    b = theorem1_bounds(c)
    assert b["T1"] == 0.5 / 4
    assert b["T2"] == pytest.approx(math.sqrt(2) * 0.5 * 1.0 / 4)
    assert b["basin_radius"] == pytest.approx(2 * 2.0 / 0.5 - b["kappa"])
    assert b["kappa"] == pytest.approx(4 * c.C1 * c.D * c.lambda_eta ** (c.ell_star + 1), rel=1e-9)
    z = theorem1_bounds(condition3_schedule(0.5, 2, 1, 0.25, _base(omega=0.0)))
    assert z["T1"] == 0 and z["T2"] == 0 and z["basin_radius"] == math.inf


def test_json_round_trip_bit_identical():
    c = condition3_schedule(0.37, 3, 2, 0.13, _base(I=3, L=2))
    back = ConvergenceConstants.from_json(c.to_json())
    assert theorem1_bounds(back) == theorem1_bounds(c)
    assert back.to_json() == c.to_json()


def test_pmu_only_identity_weights_gives_unit_sigma(rng):
    g = random_grid(rng, 4, 2)
    lay = EnsembleLayout.of(g)
    mask = SelectionMask(0, np.arange(lay.voltage.start, lay.voltage.stop), lay)
    states = [random_state(rng, 4, 0.5) for _ in range(5)]
    _, _, smin, smax = estimate_condition2(g, [mask], [np.ones(8)], [np.ones(8)], states)
    assert smin == pytest.approx(1.0, rel=1e-14) and smax == pytest.approx(1.0, rel=1e-14)


def test_unobservable_warning():
    g = GridModel([Bus(1), Bus(2)], [Line(0, 1, 0j)])
    lay = EnsembleLayout.of(g)
    mask = SelectionMask(0, np.arange(lay.injection.start, lay.M), lay)
    with pytest.warns(UnobservableWarning):
        _, _, smin, _ = estimate_condition2(g, [mask], [np.zeros(mask.size)], [np.ones(mask.size)],
                                            [np.zeros(4)])
    assert smin == pytest.approx(0.0, abs=1e-14)


def test_two_bus_sigma_max_matches_dense_svd(rng):
    g = two_bus(1 - 3j, 0.05j)
    lay = EnsembleLayout.of(g)
    mask = SelectionMask(0, np.arange(lay.M), lay)
    gam = rng.uniform(0.5, 2.0, lay.M)
    c = rng.standard_normal(lay.M)
    for _ in range(5):
        v = rng.uniform(-1.5, 1.5, 4)
        F = jacobian(g, v) / np.sqrt(gam)[:, None]
        ev = np.linalg.eigvalsh(F.T @ F)
        _, _, smin, smax = estimate_condition2(g, [mask], [c], [gam], [v])
        assert smax == pytest.approx(math.sqrt(ev[-1]), rel=1e-10)
        assert smin == pytest.approx(math.sqrt(max(ev[0], 0)), rel=1e-6, abs=1e-10)


def test_sampled_bounds_monotone_in_sample_count(rng):
    g = random_grid(rng, 5, 3)
    masks = select_measurements(g, partition_areas(5, 2), 0.8)
    cs = [rng.standard_normal(m.size) for m in masks]
    gam = CovarianceEstimate.prior(masks, 1e-2).variances
    r = np.random.default_rng(3)
    states = [r.uniform(-1.5, 1.5, 10) for _ in range(40)]
    prev = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnobservableWarning)
        for n in (1, 5, 20, 40):
            cur = estimate_condition2(g, masks, cs, gam, states[:n])
            if prev:
                assert cur[0] <= prev[0] and cur[2] <= prev[2]
                assert cur[1] >= prev[1] and cur[3] >= prev[3]
            prev = cur


def test_samplers_stay_in_box():
    r = np.random.default_rng(0)
    assert np.abs(box_sampler(1.5)(r, 1000)).max() <= 1.5
    s = perturbation_sampler(np.full(10, 1.45), 0.5, 1.5)(r, 10)
    assert np.abs(s).max() <= 1.5
    with pytest.raises(ValueError):
        estimate_condition2(two_bus(), [], [], [], box_sampler(), n_samples=0)


def test_analyze_end_to_end(rng):
    g = random_grid(rng, 4, 3)
    masks = select_measurements(g, partition_areas(4, 2), 1.0)
    v = random_state(rng, 4)
    from darse.power_flow import evaluate_f
    cs = [evaluate_f(g, v, m.rows) for m in masks]
    gam = CovarianceEstimate.prior(masks, 0.1).variances
    c = analyze(g, masks, cs, gam, 0.5, 1, 0.25, perturbation_sampler(v, 0.01), 10)
    assert c.sigma_min > 0 and 0 < c.lambda_eta < 1 and c.ell_star >= 0
    assert c.kappa == theorem1_bounds(c)["kappa"]
