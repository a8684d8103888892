"""Shared builders for the test suite."""

import numpy as np
import pytest

from crchfl.config import RunConfig, TopologySpec, TrainHyper


def make_topology(num_towns=2, vehicles=(2, 3), sizes=None, test_sizes=None) -> TopologySpec:
    vehicles = tuple(vehicles)
    if sizes is None:
        sizes = tuple(64 for _ in range(sum(vehicles)))
    if test_sizes is None:
        test_sizes = tuple(32 for _ in range(num_towns))
    return TopologySpec(num_towns, vehicles, tuple(sizes), tuple(test_sizes))


def make_config(**overrides) -> RunConfig:
    defaults = dict(
        topology=make_topology(),
        budget_mb=200.0,
        sample_size_mb=0.25,
        model_size_mb=1.0,
        candidate_edge_intervals=(2, 3),
        candidate_cloud_intervals=(1,),
        seed=11,
        train_hyper=TrainHyper(learning_rate=3e-3),
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
