import numpy as np
import pytest

from crchfl.allocator import AllocationPlan, inputs_from_config, solve_allocation
from crchfl.config import TrainHyper
from crchfl.datasets import generate_town_testset, generate_vehicle_dataset, TownProfile
from crchfl.federation import (BUDGET_INSUFFICIENT, PLAN_EXHAUSTED, Federation,
                               _pretrain_quotas, cloud_aggregate, edge_aggregate,
                               local_train, pretrain, run_crchfl, run_hfl, run_mode,
                               run_sfl)
from crchfl.ledger import TransferKind, pretrain_release_mb, transfers_per_cloud_round
from crchfl.model import AdamState, ModelDims, ParamVector, SampleBatch, init_params

from conftest import make_config, make_topology

DIMS = ModelDims(features1=4, features2=6, hidden1=(5, 4), hidden2=(6, 5))


def tiny_config(**overrides):
    defaults = dict(
        topology=make_topology(2, (2, 3), (16, 16, 16, 16, 16), (8, 8)),
        budget_mb=200.0,
        sample_size_mb=0.25,
        model_size_mb=1.0,
        candidate_edge_intervals=(2,),
        candidate_cloud_intervals=(1,),
        seed=5,
        train_hyper=TrainHyper(batch_size=8),
        pretrain_epochs=2,
    )
    defaults.update(overrides)
    return make_config(**defaults)


def plan_for(config, x=0, ie=None, ic=None, rounds=None):
    ie = ie if ie is not None else min(config.candidate_edge_intervals)
    ic = ic if ic is not None else min(config.candidate_cloud_intervals)
    m = transfers_per_cloud_round(config.topology, config.mode, ic)
    per_round = 2.0 * config.model_size_mb * m
    if rounds is None:
        rounds = int(config.budget_mb // per_round)
    u1 = x * config.sample_size_mb
    if x > 0 and config.charge_pretrain_release:
        u1 += pretrain_release_mb(config.topology, config.model_size_mb)
    return AllocationPlan(u1_mb=u1, u2_mb=config.budget_mb - u1, pretrain_batch=x,
                          edge_interval=ie, cloud_interval=ic, cloud_rounds=rounds,
                          objective=0.0)


# --- aggregation -------------------------------------------------------------

def _params_from(values) -> ParamVector:
    base = init_params(DIMS, np.random.default_rng(0))
    base.values[:] = 0.0
    base.values[:len(values)] = values
    return base


def test_fedavg_identity_on_identical_models_is_exact(rng):
    p = init_params(DIMS, rng)
    out = edge_aggregate([p, p.copy(), p.copy()], [0.2, 0.5, 0.3])
    np.testing.assert_array_equal(out.values, p.values)


def test_fedavg_midpoint():
    a = _params_from([0.0, 0.0])
    b = _params_from([2.0, 4.0])
    out = edge_aggregate([a, b], [0.5, 0.5])
    assert out.values[0] == 1.0 and out.values[1] == 2.0


def test_fedavg_rejects_bad_weights_and_shapes(rng):
    p = init_params(DIMS, rng)
    with pytest.raises(ValueError):
        edge_aggregate([p, p.copy()], [0.7, 0.7])
    other = init_params(ModelDims(2, 3, (2, 2), (3, 2)), rng)
    with pytest.raises(ValueError):
        edge_aggregate([p, other], [0.5, 0.5])


def test_town_weights_match_published_sample_counts():
    sizes = np.array([2586.0, 2587.0, 1555.0])
    weights = sizes / sizes.sum()
    weights = weights / weights.sum()
    for got, want in zip(weights, (0.3844, 0.3845, 0.2311)):
        assert abs(got - want) < 5e-5
    assert abs(weights.sum() - 1.0) < 1e-15


def test_cloud_weights_match_town_totals(rng):
    topo = make_topology(2, (2, 3), (2928, 2928, 2586, 2587, 1555), (1061, 1020))
    models = [init_params(DIMS, rng) for _ in range(2)]
    out = cloud_aggregate(models, topo)
    w1, w2 = 5856 / 12584, 6728 / 12584
    assert abs(w1 - 0.4654) < 5e-5 and abs(w2 - 0.5346) < 5e-5
    expected = models[0].values + w2 * (models[1].values - models[0].values)
    np.testing.assert_allclose(out.values, expected, rtol=0, atol=1e-15)


def test_composed_aggregation_equals_one_shot_mean(rng):
    topo = make_topology(2, (2, 3), (2928, 2928, 2586, 2587, 1555), (1061, 1020))
    vehicles = [init_params(DIMS, rng) for _ in range(5)]
    edge1 = edge_aggregate(vehicles[:2], list(np.array([2928, 2928]) / 5856))
    sizes2 = np.array([2586, 2587, 1555])
    edge2 = edge_aggregate(vehicles[2:], list(sizes2 / sizes2.sum()))
    composed = cloud_aggregate([edge1, edge2], topo)
    sizes = np.array([2928, 2928, 2586, 2587, 1555], dtype=float)
    one_shot = sum(w * m.values for w, m in zip(sizes / sizes.sum(), vehicles))
    np.testing.assert_allclose(composed.values, one_shot, rtol=0, atol=1e-9)


# --- local training and pretraining -------------------------------------------

def test_local_train_rejects_zero_epochs(rng):
    params = init_params(DIMS, rng)
    data = generate_vehicle_dataset(
        TownProfile(0, np.zeros(10), 0.0, 0.1), 0, 16, 1, DIMS)
    with pytest.raises(ValueError):
        local_train(params, AdamState.zeros(params.layout), data, 0,
                    TrainHyper(), rng)


def test_one_epoch_of_64_samples_batch_32_takes_two_steps(rng):
    params = init_params(DIMS, rng)
    state = AdamState.zeros(params.layout)
    data = generate_vehicle_dataset(
        TownProfile(0, np.zeros(10), 0.0, 0.1), 0, 64, 1, DIMS)
    local_train(params, state, data, 1, TrainHyper(batch_size=32), rng)
    assert state.step_count == 2


def test_local_train_is_deterministic(rng):
    data = generate_vehicle_dataset(
        TownProfile(0, np.zeros(10), 0.0, 0.1), 0, 48, 1, DIMS)
    outs = []
    for _ in range(2):
        params = init_params(DIMS, np.random.default_rng(42))
        state = AdamState.zeros(params.layout)
        local_train(params, state, data, 3, TrainHyper(batch_size=16),
                    np.random.default_rng(7))
        outs.append(params.values.copy())
    np.testing.assert_array_equal(outs[0], outs[1])


def test_pretrain_single_batch_equals_one_manual_adam_step(rng):
    from crchfl.model import TwoBranchModel, adam_step, loss_and_grad

    uploads = generate_vehicle_dataset(
        TownProfile(0, np.zeros(10), 0.0, 0.1), 0, 32, 1, DIMS)
    hyper = TrainHyper(batch_size=32)

    auto = init_params(DIMS, np.random.default_rng(3))
    pretrain(auto, uploads, 1, hyper, np.random.default_rng(11))

    manual = init_params(DIMS, np.random.default_rng(3))
    perm = np.random.default_rng(11).permutation(32)
    batch = uploads.take(perm)
    _, grad = loss_and_grad(TwoBranchModel(DIMS, manual), batch)
    adam_step(manual, grad, AdamState.zeros(manual.layout), hyper)
    np.testing.assert_array_equal(auto.values, manual.values)


def test_pretrain_quotas_are_proportional_capped_and_exact():
    assert _pretrain_quotas([2928, 2928, 2586, 2587, 1555], 100) == [23, 23, 21, 21, 12]
    assert sum(_pretrain_quotas([10, 20, 30], 45)) == 45
    capped = _pretrain_quotas([3, 100], 100)
    assert capped[0] <= 3 and sum(capped) == 100
    with pytest.raises(ValueError):
        _pretrain_quotas([5, 5], 11)


# --- run: event patterns and accounting ---------------------------------------

def test_single_vehicle_round_event_pattern():
    config = tiny_config(topology=make_topology(1, (1,), (16,), (8,)),
                         candidate_edge_intervals=(1,),
                         candidate_cloud_intervals=(1,), mode="HFL")
    report = run_hfl(config, dims=DIMS, plan=plan_for(config, rounds=1))
    kinds = [(e.kind.value, e.link.value, e.stage.value) for e in report.ledger.events]
    assert kinds == [
        ("ModelUp", "VehicleEdge", "II"),
        ("ModelUp", "EdgeCloud", "III"),
        ("ModelDown", "EdgeCloud", "III"),
        ("ModelDown", "VehicleEdge", "II"),
    ]
    assert report.completed_rounds == 1


def test_crchfl_prepends_upload_and_release_events():
    config = tiny_config(mode="CRCHFL")
    plan = plan_for(config, x=20, rounds=1)
    report = run_crchfl(config, dims=DIMS, plan=plan)
    events = report.ledger.events
    uploads = [e for e in events if e.kind is TransferKind.DATA_UPLOAD]
    assert sum(e.size_mb for e in uploads) == 20 * 0.25
    assert all(e.stage.value == "I" for e in uploads)
    release = [e for e in events if e.stage.value == "I"
               and e.kind is TransferKind.MODEL_DOWN]
    assert len(release) == 7  # 2 edges + 5 vehicles, one downlink each
    first_round = [e for e in events if e.round_index == 1]
    assert len(first_round) == 2 * transfers_per_cloud_round(config.topology, "HFL", 1)


def test_zero_budget_run_reports_budget_insufficient():
    config = tiny_config(budget_mb=0.0, mode="CRCHFL")
    report = run_crchfl(config, dims=DIMS)
    assert report.completed_rounds == 0
    assert report.stop_reason == BUDGET_INSUFFICIENT
    assert report.ledger.consumed_mb == 0.0


def test_upload_accounting_hundred_samples_at_half_mb():
    config = tiny_config(sample_size_mb=0.5,
                         topology=make_topology(2, (2, 3), (40, 40, 40, 40, 40), (8, 8)),
                         charge_pretrain_release=False, mode="CRCHFL")
    plan = plan_for(config, x=100, rounds=1)
    report = run_crchfl(config, dims=DIMS, plan=plan)
    uploads = [e for e in report.ledger.events if e.kind is TransferKind.DATA_UPLOAD]
    assert sum(e.size_mb for e in uploads) == 50.0


def test_consumption_decomposes_into_stages():
    config = tiny_config(mode="CRCHFL")
    report = run_crchfl(config, dims=DIMS)
    plan = report.plan
    m = transfers_per_cloud_round(config.topology, "CRCHFL", plan.cloud_interval)
    expected = plan.pretrain_batch * config.sample_size_mb
    if plan.pretrain_batch > 0 and config.charge_pretrain_release:
        expected += pretrain_release_mb(config.topology, config.model_size_mb)
    expected += 2.0 * config.model_size_mb * m * report.completed_rounds
    assert report.ledger.consumed_mb == expected
    assert report.ledger.replay_consumed() == report.ledger.consumed_mb


def test_models_fully_synchronized_after_run():
    config = tiny_config(mode="HFL")
    fed = Federation(config, dims=DIMS)
    fed.run()
    for params in fed.edge_models + fed.vehicle_models:
        np.testing.assert_array_equal(params.values, fed.cloud_model.values)


def test_round_counts_at_reference_scale():
    config = tiny_config(budget_mb=20480.0, model_size_mb=150.0, sample_size_mb=0.5)
    hfl = run_hfl(config, dims=DIMS)
    sfl = run_sfl(config, dims=DIMS)
    assert hfl.completed_rounds == 9
    assert sfl.completed_rounds == 13
    assert hfl.stop_reason == PLAN_EXHAUSTED and sfl.stop_reason == PLAN_EXHAUSTED
    assert hfl.ledger.consumed_mb == 9 * 2100.0
    assert sfl.ledger.consumed_mb == 13 * 1500.0


def test_crchfl_with_pretraining_still_reaches_nine_rounds_at_reference_scale():
    config = tiny_config(budget_mb=20480.0, model_size_mb=150.0, sample_size_mb=0.5,
                         topology=make_topology(2, (2, 3), (64,) * 5, (8, 8)),
                         mode="CRCHFL", pretrain_epochs=1)
    plan = plan_for(config, x=200, ie=2, ic=1, rounds=9)
    assert plan.u1_mb == 200 * 0.5 + 1050.0
    report = run_crchfl(config, dims=DIMS, plan=plan)
    assert report.completed_rounds == 9
    assert report.stop_reason == PLAN_EXHAUSTED
    assert report.ledger.consumed_mb == 1150.0 + 9 * 2100.0


def test_crchfl_without_pretraining_degenerates_to_hfl():
    config = tiny_config()
    plan = plan_for(config.with_mode("HFL"), x=0, rounds=5)
    a = run_hfl(config, dims=DIMS, plan=plan)
    b = run_crchfl(config, dims=DIMS, plan=plan)
    assert a.metrics == b.metrics
    assert a.ledger.events == b.ledger.events
    assert a.completed_rounds == b.completed_rounds


def test_identical_datasets_make_hfl_and_sfl_agree_after_one_round(rng):
    config = tiny_config(candidate_edge_intervals=(1,))
    shared = generate_vehicle_dataset(TownProfile(0, np.zeros(10), 0.0, 0.1),
                                      0, 16, 99, DIMS)
    train = [shared] * 5
    test = generate_town_testset(TownProfile(0, np.zeros(10), 0.0, 0.1), 8, 99, DIMS)
    h_fed = Federation(config.with_mode("HFL"), datasets=(train, test), dims=DIMS,
                       plan=plan_for(config.with_mode("HFL"), rounds=1, ie=1))
    s_fed = Federation(config.with_mode("SFL"), datasets=(train, test), dims=DIMS,
                       plan=plan_for(config.with_mode("SFL"), rounds=1, ie=1, ic=1))
    h_report = h_fed.run()
    s_report = s_fed.run()
    np.testing.assert_allclose(h_fed.cloud_model.values, s_fed.cloud_model.values,
                               rtol=0, atol=1e-9)
    assert h_report.completed_rounds == s_report.completed_rounds == 1


def test_reports_are_bit_reproducible():
    config = tiny_config(mode="CRCHFL")
    a = run_crchfl(config, dims=DIMS)
    b = run_crchfl(config, dims=DIMS)
    assert a.to_json() == b.to_json()


def test_run_mode_dispatch():
    config = tiny_config()
    report = run_mode(config, "sfl", dims=DIMS)
    assert report.mode == "SFL"
    with pytest.raises(KeyError):
        run_mode(config, "nope", dims=DIMS)


def test_solver_plan_is_respected_end_to_end():
    config = tiny_config(mode="CRCHFL",
                         topology=make_topology(2, (2, 3), (40,) * 5, (8, 8)),
                         candidate_edge_intervals=(2, 3))
    plan = solve_allocation(inputs_from_config(config))
    report = run_crchfl(config, dims=DIMS)
    assert report.plan == plan
    assert report.completed_rounds == plan.cloud_rounds
    assert report.stop_reason == PLAN_EXHAUSTED
