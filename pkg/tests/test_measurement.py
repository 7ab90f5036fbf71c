import numpy as np
import pytest
from hypothesis import given, strategies as st

from darse.measurement import (NoiseSpec, Ownership, Snapshot, partition_areas, partition_sizes,
                               row_owners, select_measurements, synthesize_snapshot, whiten_area)
from darse.power_flow import EnsembleLayout, evaluate_f

from conftest import random_grid, random_state


def test_118_bus_ten_area_partition_sizes():
    assert sorted(partition_sizes(118, 10)) == [10] + [12] * 9


def test_partition_single_area():
    p = partition_areas(7, 1)
    assert p.I == 1 and p.sizes == [7]


@given(st.integers(2, 40), st.integers(1, 12), st.integers(0, 1000))
def test_partition_is_a_partition(N, I, seed):
    I = min(I, N)
    p = partition_areas(N, I, seed)
    buses = np.concatenate([p.buses(i) for i in range(p.I)])
    assert sorted(buses.tolist()) == list(range(N))
    assert all(s >= 1 for s in p.sizes) and p.I == I


def test_partition_rejects_too_many_areas():
    with pytest.raises(ValueError):
        partition_sizes(3, 4)


def test_full_selection_covers_ensemble(rng):
    g = random_grid(rng, 6, 3)
    masks = select_measurements(g, partition_areas(6, 3), 1.0)
    rows = np.concatenate([m.rows for m in masks])
    assert sorted(rows.tolist()) == list(range(EnsembleLayout.of(g).M))


@given(st.integers(0, 1000), st.floats(0.05, 1.0), st.sampled_from(list(Ownership)))
def test_masks_disjoint_and_sorted(seed, frac, policy):
    g = random_grid(np.random.default_rng(seed), 7, 4)
    masks = select_measurements(g, partition_areas(7, 3, seed), frac, pmu_areas=[0], seed=seed,
                                policy=policy)
    rows = np.concatenate([m.rows for m in masks])
    assert len(set(rows.tolist())) == rows.size <= EnsembleLayout.of(g).M
    for m in masks:
        assert np.all(np.diff(m.rows) > 0)
        assert sum(m.category_sizes().values()) == m.size


def test_pmu_rows_confined_to_pmu_areas():
    from darse.io import parse_case

    g = parse_case("case118").to_grid()
    part = partition_areas(g.N, 10, 0)
    masks = select_measurements(g, part, 0.5, pmu_areas=[0, 1, 2], seed=0)
    owners = row_owners(g, part)
    lay = EnsembleLayout.of(g)
    pmu_rows = np.arange(lay.quadratic.start)
    for m in masks:
        got = m.category("voltage").size + m.category("current").size
        if m.area in (0, 1, 2):
            assert got == int(np.sum(owners[pmu_rows] == m.area))
        else:
            assert got == 0


def test_selection_matrix_rows_are_basis_vectors(rng):
    g = random_grid(rng, 4, 2)
    m = select_measurements(g, partition_areas(4, 2), 0.5, seed=3)[0]
    T = m.matrix()
    assert np.all(T.sum(axis=1) == 1)
    v = rng.standard_normal(8)
    np.testing.assert_array_equal(T @ evaluate_f(g, v), evaluate_f(g, v)[m.rows])


def test_zero_sigma_is_noise_free(rng):
    g = random_grid(rng, 5, 2)
    masks = select_measurements(g, partition_areas(5, 2), 0.7, seed=1)
    v = random_state(rng, 5)
    snap = synthesize_snapshot(g, v, masks, NoiseSpec(0.0))
    np.testing.assert_array_equal(snap.z, evaluate_f(g, v))
    for m, c in zip(masks, snap.c):
        np.testing.assert_array_equal(c, evaluate_f(g, v)[m.rows])


def test_bad_rows_inflated_and_selected(rng):
    g = random_grid(rng, 6, 3)
    masks = select_measurements(g, partition_areas(6, 2), 0.5, seed=2)
    snap = synthesize_snapshot(g, random_state(rng, 6), masks, NoiseSpec(1e-3, 5, 100.0, seed=4))
    selected = set(np.concatenate([m.rows for m in masks]).tolist())
    assert len(snap.bad_rows) == 5 and set(snap.bad_rows.tolist()) <= selected
    np.testing.assert_allclose(snap.variances[snap.bad_rows], 100e-6)
    good = np.setdiff1d(np.arange(snap.variances.size), snap.bad_rows)
    np.testing.assert_allclose(snap.variances[good], 1e-6)


def test_bad_rows_persistence(rng):
    g = random_grid(rng, 6, 3)
    masks = select_measurements(g, partition_areas(6, 2), 1.0)
    v = random_state(rng, 6)
    moving = [synthesize_snapshot(g, v, masks, NoiseSpec(1e-3, 4, seed=1), t).bad_rows for t in range(4)]
    sticky = [synthesize_snapshot(g, v, masks, NoiseSpec(1e-3, 4, seed=1, persistent=True), t).bad_rows
              for t in range(4)]
    assert all(np.array_equal(sticky[0], b) for b in sticky)
    assert not all(np.array_equal(moving[0], b) for b in moving)


def test_too_many_bad_rows(rng):
    g = random_grid(rng, 3, 0)
    masks = select_measurements(g, partition_areas(3, 1), 0.1, pmu_areas=[], seed=0)
    n = sum(m.size for m in masks)
    with pytest.raises(ValueError):
        synthesize_snapshot(g, random_state(rng, 3), masks, NoiseSpec(1e-3, n + 1))


def test_snapshot_round_trip(rng):
    g = random_grid(rng, 4, 2)
    masks = select_measurements(g, partition_areas(4, 2), 0.6, seed=5)
    s = synthesize_snapshot(g, random_state(rng, 4), masks, NoiseSpec(1e-2, 2, seed=9), t=3)
    r = Snapshot.from_dict(s.to_dict())
    assert r.t == 3
    for a, b in ((s.z, r.z), (s.true_state, r.true_state), (s.variances, r.variances), (s.bad_rows, r.bad_rows)):
        np.testing.assert_array_equal(a, b)


def test_whitening():
    c = np.array([2.0, -4.0, 6.0])
    np.testing.assert_array_equal(whiten_area(c, np.ones(3)), c)
    np.testing.assert_array_equal(whiten_area(c, np.full(3, 4.0)), c / 2)
    with pytest.raises(ValueError):
        whiten_area(c, np.array([1.0, 0.0, 1.0]))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)
    with pytest.raises(ValueError):
        NoiseSpec(1.0, bad_count=-1)


def test_empty_area_warns(rng, caplog):
    g = random_grid(rng, 4, 1)
    select_measurements(g, partition_areas(4, 4), 0.01, pmu_areas=[], seed=0)
    assert "records no measurements" in caplog.text
