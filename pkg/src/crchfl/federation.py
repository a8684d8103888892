"""Three-stage federated training orchestration plus the HFL/SFL baselines.

One cloud round of the hierarchical modes runs cloud_interval edge
aggregations (each preceded by edge_interval local epochs on every vehicle)
and ends with a cloud aggregation whose result is released back down to
every edge and vehicle. SFL skips the edge tier: vehicles train and
aggregate directly with the cloud. Every model transfer is charged to the
ledger as it happens; a round only starts if it is affordable in full.

Everything is sequential and seeded, so runs are bit-reproducible; the
"in parallel" loops of the protocol are executed in fixed vehicle order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .allocator import (AllocationPlan, InfeasibleAllocation, inputs_from_config,
                        solve_allocation)
from .config import RunConfig, TrainHyper
from .datasets import build_datasets
from .ledger import (Link, Stage, ThroughputLedger, TransferEvent, TransferKind,
                     pretrain_release_mb, rounds_affordable, transfers_per_cloud_round)
from .model import (AdamState, MetricsRecord, ModelDims, ParamVector, SampleBatch,
                    TwoBranchModel, adam_step, evaluate, init_params, loss_and_grad)

PLAN_EXHAUSTED = "PlanExhausted"
BUDGET_INSUFFICIENT = "BudgetInsufficient"


@dataclass
class RunReport:
    mode: str
    plan: AllocationPlan
    metrics: list[MetricsRecord]
    ledger: ThroughputLedger
    completed_rounds: int
    stop_reason: str
    best: MetricsRecord | None
    config: RunConfig
    best_params: ParamVector | None = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        topo = self.config.topology
        plan_dict = self.plan.to_dict()
        plan_dict["degenerate"] = self.plan.degenerate
        return {
            "mode": self.mode,
            "kernel_backend": kernels.backend_name(),
            "seed": self.config.seed,
            "budget_mb": self.config.budget_mb,
            "sample_size_mb": self.config.sample_size_mb,
            "model_size_mb": self.config.model_size_mb,
            "topology": {
                "num_towns": topo.num_towns,
                "vehicles_per_town": list(topo.vehicles_per_town),
                "train_sizes": list(topo.train_sizes),
                "test_sizes": list(topo.test_sizes),
            },
            "plan": plan_dict,
            "completed_rounds": self.completed_rounds,
            "stop_reason": self.stop_reason,
            "consumed_mb": self.ledger.consumed_mb,
            "best": self.best.to_dict() if self.best else None,
            "metrics": [m.to_dict() for m in self.metrics],
            "events": self.ledger.csv_rows(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def local_train(params: ParamVector, adam_state: AdamState, data: SampleBatch,
                epochs: int, hyper: TrainHyper, rng: np.random.Generator) -> ParamVector:
    """`epochs` full passes of seeded-shuffle mini-batch Adam, in place."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    dims = _dims_of(params)
    model = TwoBranchModel(dims, params)
    n = len(data)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            batch = data.take(perm[start:start + hyper.batch_size])
            _, grad = loss_and_grad(model, batch)
            adam_step(params, grad, adam_state, hyper)
    return params


def pretrain(cloud: ParamVector, uploads: SampleBatch, epochs: int,
             hyper: TrainHyper, rng: np.random.Generator) -> ParamVector:
    """Centralized pretraining pass over the uploaded samples, in place."""
    if len(uploads) == 0:
        raise ValueError("pretraining requires a non-empty upload batch")
    state = AdamState.zeros(cloud.layout)
    return local_train(cloud, state, uploads, epochs, hyper, rng)


def _dims_of(params: ParamVector) -> ModelDims:
    return params.layout.dims


def _weights_from_sizes(sizes) -> np.ndarray:
    w = np.asarray(sizes, dtype=np.float64)
    w = w / w.sum()
    return w / w.sum()


def _weighted_average(models: list[ParamVector], weights: np.ndarray) -> ParamVector:
    """Delta-form weighted mean: exact identity when all models coincide."""
    if len(models) != len(weights):
        raise ValueError("one weight per model required")
    if abs(float(np.sum(weights)) - 1.0) > 1e-12:
        raise ValueError(f"weights must sum to 1, got {float(np.sum(weights))!r}")
    base = models[0].values
    for m in models[1:]:
        if m.values.shape != base.shape:
            raise ValueError("model dimensions differ")
    out = base.copy()
    for w, m in zip(weights, models):
        out += w * (m.values - base)
    return ParamVector(out, models[0].layout)


def edge_aggregate(models: list[ParamVector], weights: list[float]) -> ParamVector:
    """Dataset-size-weighted FedAvg of one town's vehicle models."""
    return _weighted_average(models, np.asarray(weights, dtype=np.float64))


def cloud_aggregate(edge_models: list[ParamVector], topology) -> ParamVector:
    """FedAvg of the edge models, weighted by per-town sample totals."""
    totals = [sum(topology.town_train_sizes(n)) for n in range(topology.num_towns)]
    return _weighted_average(edge_models, _weights_from_sizes(totals))


def _pretrain_quotas(sizes: list[int], x: int) -> list[int]:
    """Largest-remainder apportionment of x uploads across vehicles.

    Proportional to dataset sizes, capped at each vehicle's size; ties and
    overflow are resolved in vehicle index order so the draw is
    deterministic.
    """
    total = sum(sizes)
    if x > total:
        raise ValueError(f"cannot upload {x} samples from {total} available")
    exact = [x * s / total for s in sizes]
    quotas = [int(e) for e in exact]
    remainders = sorted(range(len(sizes)),
                        key=lambda i: (-(exact[i] - quotas[i]), i))
    for i in remainders:
        if sum(quotas) == x:
            break
        quotas[i] += 1
    # Respect per-vehicle capacity, pushing any excess to vehicles with room.
    for i in range(len(quotas)):
        if quotas[i] > sizes[i]:
            excess = quotas[i] - sizes[i]
            quotas[i] = sizes[i]
            for j in range(len(quotas)):
                spare = sizes[j] - quotas[j]
                if spare > 0:
                    add = min(spare, excess)
                    quotas[j] += add
                    excess -= add
                    if excess == 0:
                        break
    assert sum(quotas) == x
    return quotas


class Federation:
    """Mutable run state: one model per vehicle/edge plus the cloud model."""

    def __init__(self, config: RunConfig, datasets=None, dims: ModelDims = ModelDims(),
                 plan: AllocationPlan | None = None):
        self.config = config
        self.dims = dims
        if datasets is None:
            datasets = build_datasets(config, dims)
        self.train_sets, self.test_set = datasets
        topo = config.topology
        if len(self.train_sets) != topo.total_vehicles:
            raise ValueError("need one training set per vehicle")

        self.plan = plan if plan is not None else self._make_plan()
        self.ledger = ThroughputLedger(budget_mb=config.budget_mb)
        self.round = 0

        init_rng = np.random.default_rng([config.seed, 0])
        self.cloud_model = init_params(dims, init_rng)
        self.edge_models = [self.cloud_model.copy() for _ in range(topo.num_towns)]
        self.vehicle_models = [self.cloud_model.copy() for _ in range(topo.total_vehicles)]
        self.adam_states = [AdamState.zeros(self.cloud_model.layout)
                            for _ in range(topo.total_vehicles)]
        self._pretrain_select = np.random.default_rng([config.seed, 1])
        self._pretrain_shuffle = np.random.default_rng([config.seed, 2])
        self._vehicle_rngs = [np.random.default_rng([config.seed, 3, i])
                              for i in range(topo.total_vehicles)]

    # -- plan -----------------------------------------------------------------

    def _make_plan(self) -> AllocationPlan:
        config = self.config
        if config.mode == "CRCHFL":
            try:
                return solve_allocation(inputs_from_config(config))
            except InfeasibleAllocation:
                return self._empty_plan()
        return self._baseline_plan()

    def _baseline_plan(self) -> AllocationPlan:
        """Fixed-interval plan for HFL/SFL: whole budget to model transfer.

        The baselines run no optimizer; they take the smallest candidate
        intervals and as many cloud rounds as the budget affords.
        """
        config = self.config
        ie = min(config.candidate_edge_intervals)
        ic = min(config.candidate_cloud_intervals) if config.mode != "SFL" else 1
        m = transfers_per_cloud_round(config.topology, config.mode, ic)
        rounds = rounds_affordable(config.budget_mb, config.model_size_mb, m)
        return AllocationPlan(u1_mb=0.0, u2_mb=config.budget_mb, pretrain_batch=0,
                              edge_interval=ie, cloud_interval=ic,
                              cloud_rounds=rounds, objective=0.0)

    def _empty_plan(self) -> AllocationPlan:
        config = self.config
        return AllocationPlan(u1_mb=0.0, u2_mb=config.budget_mb, pretrain_batch=0,
                              edge_interval=min(config.candidate_edge_intervals),
                              cloud_interval=min(config.candidate_cloud_intervals),
                              cloud_rounds=0, objective=0.0)

    # -- transfers -------------------------------------------------------------

    def _consume(self, kind: TransferKind, link: Link, size_mb: float,
                 stage: Stage, round_index: int) -> bool:
        return self.ledger.try_consume(TransferEvent(
            kind=kind, link=link, size_mb=size_mb, stage=stage,
            round_index=round_index))

    def _round_cost_mb(self) -> float:
        mode = self.config.mode
        ic = self.plan.cloud_interval if mode != "SFL" else 1
        m = transfers_per_cloud_round(self.config.topology, mode, ic)
        return 2.0 * self.config.model_size_mb * m

    # -- stages ----------------------------------------------------------------

    def _stage1(self) -> bool:
        """Collect uploads, pretrain, release. False if the budget ran out."""
        x = self.plan.pretrain_batch
        if x <= 0:
            return True
        config = self.config
        topo = config.topology
        quotas = _pretrain_quotas(list(topo.train_sizes), x)
        picked = []
        for i, quota in enumerate(quotas):
            if quota == 0:
                continue
            if not self._consume(TransferKind.DATA_UPLOAD, Link.VEHICLE_CLOUD,
                                 quota * config.sample_size_mb, Stage.I, 0):
                return False
            idx = self._pretrain_select.choice(len(self.train_sets[i]), size=quota,
                                               replace=False)
            picked.append(self.train_sets[i].take(np.sort(idx)))
        uploads = SampleBatch.concat(picked)
        pretrain(self.cloud_model, uploads, config.pretrain_epochs,
                 config.train_hyper, self._pretrain_shuffle)
        if config.charge_pretrain_release:
            e = config.model_size_mb
            for _ in range(topo.num_towns):
                if not self._consume(TransferKind.MODEL_DOWN, Link.EDGE_CLOUD, e, Stage.I, 0):
                    return False
            for _ in range(topo.total_vehicles):
                if not self._consume(TransferKind.MODEL_DOWN, Link.VEHICLE_EDGE, e, Stage.I, 0):
                    return False
        self._release_cloud_model()
        return True

    def _release_cloud_model(self) -> None:
        for n in range(len(self.edge_models)):
            self.edge_models[n] = self.cloud_model.copy()
        for i in range(len(self.vehicle_models)):
            self.vehicle_models[i] = self.cloud_model.copy()

    def _train_vehicle(self, flat_index: int, epochs: int) -> None:
        local_train(self.vehicle_models[flat_index], self.adam_states[flat_index],
                    self.train_sets[flat_index], epochs, self.config.train_hyper,
                    self._vehicle_rngs[flat_index])

    def _hierarchical_round(self, round_index: int) -> bool:
        config = self.config
        topo = config.topology
        e = config.model_size_mb
        ie, ic = self.plan.edge_interval, self.plan.cloud_interval
        for tau2 in range(1, ic + 1):
            for n in range(topo.num_towns):
                for k in range(topo.vehicles_per_town[n]):
                    i = topo.vehicle_index(n, k)
                    self._train_vehicle(i, ie)
                    if not self._consume(TransferKind.MODEL_UP, Link.VEHICLE_EDGE, e,
                                         Stage.II, round_index):
                        return False
            for n in range(topo.num_towns):
                town_models = [self.vehicle_models[topo.vehicle_index(n, k)]
                               for k in range(topo.vehicles_per_town[n])]
                weights = _weights_from_sizes(topo.town_train_sizes(n))
                self.edge_models[n] = _weighted_average(town_models, weights)
            if tau2 < ic:
                for n in range(topo.num_towns):
                    for k in range(topo.vehicles_per_town[n]):
                        i = topo.vehicle_index(n, k)
                        if not self._consume(TransferKind.MODEL_DOWN, Link.VEHICLE_EDGE,
                                             e, Stage.II, round_index):
                            return False
                        self.vehicle_models[i] = self.edge_models[n].copy()
        for _ in range(topo.num_towns):
            if not self._consume(TransferKind.MODEL_UP, Link.EDGE_CLOUD, e,
                                 Stage.III, round_index):
                return False
        self.cloud_model = cloud_aggregate(self.edge_models, topo)
        for n in range(topo.num_towns):
            if not self._consume(TransferKind.MODEL_DOWN, Link.EDGE_CLOUD, e,
                                 Stage.III, round_index):
                return False
            self.edge_models[n] = self.cloud_model.copy()
        for i in range(topo.total_vehicles):
            if not self._consume(TransferKind.MODEL_DOWN, Link.VEHICLE_EDGE, e,
                                 Stage.II, round_index):
                return False
            self.vehicle_models[i] = self.cloud_model.copy()
        return True

    def _single_hop_round(self, round_index: int) -> bool:
        config = self.config
        topo = config.topology
        e = config.model_size_mb
        for i in range(topo.total_vehicles):
            self._train_vehicle(i, self.plan.edge_interval)
            if not self._consume(TransferKind.MODEL_UP, Link.VEHICLE_CLOUD, e,
                                 Stage.III, round_index):
                return False
        weights = _weights_from_sizes(topo.train_sizes)
        self.cloud_model = _weighted_average(self.vehicle_models, weights)
        for i in range(topo.total_vehicles):
            if not self._consume(TransferKind.MODEL_DOWN, Link.VEHICLE_CLOUD, e,
                                 Stage.III, round_index):
                return False
            self.vehicle_models[i] = self.cloud_model.copy()
        return True

    # -- run -------------------------------------------------------------------

    def run(self) -> RunReport:
        config = self.config
        metrics: list[MetricsRecord] = []
        checkpoints: list[ParamVector] = []
        stop_reason = PLAN_EXHAUSTED
        completed = 0

        ok = True
        if config.mode == "CRCHFL":
            ok = self._stage1()
        if ok:
            model = TwoBranchModel(self.dims, self.cloud_model)
            metrics.append(evaluate(model, self.test_set, 0, self.ledger.consumed_mb))
            checkpoints.append(self.cloud_model.copy())
            round_cost = self._round_cost_mb()
            for round_index in range(1, self.plan.cloud_rounds + 1):
                if not self.ledger.affordable(round_cost):
                    stop_reason = BUDGET_INSUFFICIENT
                    break
                self.round = round_index
                if config.mode == "SFL":
                    round_ok = self._single_hop_round(round_index)
                else:
                    round_ok = self._hierarchical_round(round_index)
                if not round_ok:
                    stop_reason = BUDGET_INSUFFICIENT
                    break
                completed = round_index
                model = TwoBranchModel(self.dims, self.cloud_model)
                metrics.append(evaluate(model, self.test_set, round_index,
                                        self.ledger.consumed_mb))
                checkpoints.append(self.cloud_model.copy())
            else:
                if self.plan.cloud_rounds == 0:
                    stop_reason = BUDGET_INSUFFICIENT
        else:
            stop_reason = BUDGET_INSUFFICIENT

        best = None
        best_params = None
        if metrics:
            order = max(range(len(metrics)),
                        key=lambda i: (metrics[i].accuracy, -metrics[i].loss,
                                       -metrics[i].round))
            best = metrics[order]
            best_params = checkpoints[order]
        return RunReport(mode=config.mode, plan=self.plan, metrics=metrics,
                         ledger=self.ledger, completed_rounds=completed,
                         stop_reason=stop_reason, best=best, config=config,
                         best_params=best_params)


def run_crchfl(config: RunConfig, datasets=None, dims: ModelDims = ModelDims(),
               plan: AllocationPlan | None = None) -> RunReport:
    return Federation(config.with_mode("CRCHFL"), datasets, dims, plan).run()


def run_hfl(config: RunConfig, datasets=None, dims: ModelDims = ModelDims(),
            plan: AllocationPlan | None = None) -> RunReport:
    return Federation(config.with_mode("HFL"), datasets, dims, plan).run()


def run_sfl(config: RunConfig, datasets=None, dims: ModelDims = ModelDims(),
            plan: AllocationPlan | None = None) -> RunReport:
    return Federation(config.with_mode("SFL"), datasets, dims, plan).run()


def run_mode(config: RunConfig, mode: str, datasets=None,
             dims: ModelDims = ModelDims(),
             plan: AllocationPlan | None = None) -> RunReport:
    runner = {"CRCHFL": run_crchfl, "HFL": run_hfl, "SFL": run_sfl}[mode.upper()]
    return runner(config, datasets, dims, plan)
