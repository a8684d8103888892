import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crchfl.datasets import (TownProfile, build_datasets, dac_steer,
                             dataset_to_csv, default_profiles, digitize_steer,
                             generate_town_testset, generate_vehicle_dataset)
from crchfl.model import ModelDims

from conftest import make_config, make_topology

DIMS = ModelDims(features1=4, features2=6, hidden1=(5, 4), hidden2=(6, 5))


def make_profile(town_id=0, shift=0.0, noise=0.1) -> TownProfile:
    total = DIMS.features1 + DIMS.features2
    return TownProfile(town_id=town_id, feature_shift=np.full(total, shift),
                       steer_bias=0.0, noise_scale=noise)


def test_generation_is_deterministic():
    profile = make_profile()
    a = generate_vehicle_dataset(profile, 0, 50, seed=9, dims=DIMS)
    b = generate_vehicle_dataset(profile, 0, 50, seed=9, dims=DIMS)
    np.testing.assert_array_equal(a.features1, b.features1)
    np.testing.assert_array_equal(a.features2, b.features2)
    np.testing.assert_array_equal(a.throttle_brake, b.throttle_brake)
    np.testing.assert_array_equal(a.steer_level, b.steer_level)


def test_different_vehicles_and_seeds_differ():
    profile = make_profile()
    a = generate_vehicle_dataset(profile, 0, 50, seed=9, dims=DIMS)
    b = generate_vehicle_dataset(profile, 1, 50, seed=9, dims=DIMS)
    c = generate_vehicle_dataset(profile, 0, 50, seed=10, dims=DIMS)
    assert not np.array_equal(a.features1, b.features1)
    assert not np.array_equal(a.features1, c.features1)


def test_requested_sample_count_is_honoured():
    batch = generate_vehicle_dataset(make_profile(), 1, 2928, seed=0, dims=DIMS)
    assert len(batch) == 2928


def test_rejects_empty_request():
    with pytest.raises(ValueError):
        generate_vehicle_dataset(make_profile(), 0, 0, seed=1, dims=DIMS)


def test_town_shift_moves_the_feature_mean():
    n = 4000
    shift = 2.5
    a = generate_vehicle_dataset(make_profile(town_id=0, shift=0.0), 0, n, 3, DIMS)
    b = generate_vehicle_dataset(make_profile(town_id=1, shift=shift), 0, n, 3, DIMS)
    gap = np.concatenate([b.features1.mean(axis=0) - a.features1.mean(axis=0),
                          b.features2.mean(axis=0) - a.features2.mean(axis=0)])
    tol = 3.0 * math.sqrt(2.0 / n)  # 3 sigma for a difference of two means
    assert np.all(np.abs(gap - shift) < tol)


def test_actions_are_valid_targets():
    batch = generate_vehicle_dataset(make_profile(shift=1.0), 2, 500, 7, DIMS)
    assert np.all((batch.throttle_brake >= 0.0) & (batch.throttle_brake <= 1.0))
    assert batch.steer_level.min() >= 0 and batch.steer_level.max() <= 6


# --- digitizer / DAC ---------------------------------------------------------

def test_digitizer_edges_and_center():
    assert digitize_steer(-1.0) == 0
    assert digitize_steer(0.0) == 3
    assert digitize_steer(1.0) == 6
    assert digitize_steer(-5.0) == 0   # clamped
    assert digitize_steer(5.0) == 6


def test_dac_bin_centers():
    assert dac_steer(3) == pytest.approx(0.0, abs=1e-15)
    assert dac_steer(0) == pytest.approx(-6.0 / 7.0, abs=1e-15)
    assert dac_steer(6) == pytest.approx(6.0 / 7.0, abs=1e-15)
    with pytest.raises(ValueError):
        dac_steer(7)
    with pytest.raises(ValueError):
        dac_steer(-1)


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False))
def test_round_trip_error_bounded_by_half_bin(steer):
    level = digitize_steer(steer)
    assert 0 <= level <= 6
    assert abs(dac_steer(level) - steer) <= 1.0 / 7.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False),
       st.floats(min_value=-1.0, max_value=1.0, allow_nan=False))
def test_digitizer_is_monotone(a, b):
    lo, hi = sorted((a, b))
    assert digitize_steer(lo) <= digitize_steer(hi)


def test_dac_is_strictly_increasing():
    values = [dac_steer(level) for level in range(7)]
    assert all(b > a for a, b in zip(values, values[1:]))


# --- config-level assembly ----------------------------------------------------

def test_build_datasets_matches_topology():
    config = make_config(topology=make_topology(2, (2, 1), (30, 40, 50), (16, 8)))
    train, test = build_datasets(config, DIMS)
    assert [len(t) for t in train] == [30, 40, 50]
    assert len(test) == 24
    train2, test2 = build_datasets(config, DIMS)
    np.testing.assert_array_equal(test.features2, test2.features2)
    np.testing.assert_array_equal(train[1].features1, train2[1].features1)


def test_default_profiles_are_symmetric_and_deterministic():
    topo = make_topology()
    a = default_profiles(topo, DIMS)
    b = default_profiles(topo, DIMS)
    assert len(a) == topo.num_towns
    np.testing.assert_array_equal(a[0].feature_shift, b[0].feature_shift)
    np.testing.assert_array_equal(a[0].feature_shift, -a[1].feature_shift)


def test_testset_stream_is_disjoint_from_vehicle_streams():
    profile = make_profile()
    test = generate_town_testset(profile, 64, seed=4, dims=DIMS)
    veh = generate_vehicle_dataset(profile, 0, 64, seed=4, dims=DIMS)
    assert not np.array_equal(test.features1, veh.features1)


def test_dataset_csv_export_round_trips(tmp_path):
    import csv as csv_mod

    batch = generate_vehicle_dataset(make_profile(shift=0.5), 0, 20, seed=2, dims=DIMS)
    path = tmp_path / "town0_vehicle0.csv"
    dataset_to_csv(batch, path)
    with open(path) as fh:
        rows = list(csv_mod.DictReader(fh))
    assert len(rows) == 20
    for i in (0, 7, 19):
        assert float(rows[i]["feature1_0"]) == batch.features1[i, 0]
        assert float(rows[i]["throttle"]) == batch.throttle_brake[i, 0]
        assert float(rows[i]["brake"]) == batch.throttle_brake[i, 1]
        assert int(rows[i]["steer_level"]) == batch.steer_level[i]
