"""Budget allocation: split the throughput budget between pretraining data
and federated rounds, and choose the aggregation intervals.

The objective credits alpha per uploaded pretraining sample and gamma *
(1 - d / (edge_interval * cloud_interval * cloud_rounds)) per distributed
effective sample. For a fixed interval pair the objective is non-decreasing
in cloud_rounds, so the solver only scans the pretraining sample count and
takes the maximal affordable round count; the brute-force oracle enumerates
every feasible integer tuple instead and must agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig, TopologySpec
from .ledger import pretrain_release_mb, transfers_per_cloud_round

ORACLE_POINT_CAP = 10_000_000


class InfeasibleAllocation(Exception):
    """No candidate interval pair affords even one cloud round."""


class SearchSpaceTooLarge(Exception):
    """Brute-force enumeration would exceed the configured point cap."""


@dataclass(frozen=True)
class AllocInputs:
    budget_mb: float
    sample_size_mb: float
    model_size_mb: float
    alpha: float
    gamma: float
    d: float
    y_effective: float
    candidate_edge_intervals: tuple[int, ...]
    candidate_cloud_intervals: tuple[int, ...]
    topology: TopologySpec
    charge_release: bool = True

    def __post_init__(self):
        if not self.candidate_edge_intervals or not self.candidate_cloud_intervals:
            raise ValueError("candidate interval sets must be non-empty")
        if not self.sample_size_mb > 0 or not self.model_size_mb > 0:
            raise ValueError("sample_size_mb and model_size_mb must be > 0")

    @property
    def max_pretrain(self) -> int:
        # Samples are uploaded without replacement, so the pretraining batch
        # can never exceed what the vehicles actually hold.
        return self.topology.total_train_samples

    @property
    def release_mb(self) -> float:
        if not self.charge_release:
            return 0.0
        return pretrain_release_mb(self.topology, self.model_size_mb)


@dataclass(frozen=True)
class AllocationPlan:
    u1_mb: float
    u2_mb: float
    pretrain_batch: int
    edge_interval: int
    cloud_interval: int
    cloud_rounds: int
    objective: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "u1_mb": self.u1_mb,
            "u2_mb": self.u2_mb,
            "pretrain_batch": self.pretrain_batch,
            "edge_interval": self.edge_interval,
            "cloud_interval": self.cloud_interval,
            "cloud_rounds": self.cloud_rounds,
            "objective": self.objective,
        }


def effective_samples(topology: TopologySpec, y_scale: float) -> float:
    """Distributed effective-sample count credited to the federated stages."""
    if not y_scale > 0:
        raise ValueError("y_scale must be > 0")
    return y_scale * topology.total_train_samples


def inputs_from_config(config: RunConfig) -> AllocInputs:
    return AllocInputs(
        budget_mb=config.budget_mb,
        sample_size_mb=config.sample_size_mb,
        model_size_mb=config.model_size_mb,
        alpha=config.alpha,
        gamma=config.gamma,
        d=config.d,
        y_effective=effective_samples(config.topology, config.y_scale),
        candidate_edge_intervals=config.candidate_edge_intervals,
        candidate_cloud_intervals=config.candidate_cloud_intervals,
        topology=config.topology,
        charge_release=config.charge_pretrain_release,
    )


def objective_value(x: int, edge_interval: int, cloud_interval: int,
                    cloud_rounds: int, inputs: AllocInputs) -> float:
    """alpha * x + gamma * (1 - d / (I_e * I_c * T)) * y."""
    product = edge_interval * cloud_interval * cloud_rounds
    if product < 1:
        raise ValueError("edge_interval * cloud_interval * cloud_rounds must be >= 1")
    return inputs.alpha * x + inputs.gamma * (1.0 - inputs.d / product) * inputs.y_effective


# ---------------------------------------------------------------------------
# Shared feasibility arithmetic. Both search routes go through these helpers
# so that borderline floating-point cases cannot make them disagree.
# ---------------------------------------------------------------------------

def _stage1_spend(x_arr: np.ndarray, inputs: AllocInputs) -> np.ndarray:
    """Stage-I megabytes for each pretraining batch size in x_arr.

    Uploading x samples costs x * sample_size_mb; any nonzero upload also
    triggers the pretrained-model release (when charged).
    """
    spend = x_arr * inputs.sample_size_mb
    return np.where(x_arr > 0, spend + inputs.release_mb, spend)


def _max_rounds(x_arr: np.ndarray, per_round_mb: float, inputs: AllocInputs) -> np.ndarray:
    spend = _stage1_spend(x_arr, inputs)
    return np.maximum(0, np.floor((inputs.budget_mb - spend) / per_round_mb)).astype(np.int64)


def _candidate_pairs(inputs: AllocInputs) -> list[tuple[int, int]]:
    pairs = sorted({
        (ie, ic)
        for ie in inputs.candidate_edge_intervals
        for ic in inputs.candidate_cloud_intervals
        if 0 < ic < ie
    })
    return pairs


def _pair_per_round_mb(inputs: AllocInputs, cloud_interval: int) -> float:
    m = transfers_per_cloud_round(inputs.topology, "CRCHFL", cloud_interval)
    return 2.0 * inputs.model_size_mb * m


def _objective_array(x_arr: np.ndarray, t_arr: np.ndarray, edge_interval: int,
                     cloud_interval: int, inputs: AllocInputs) -> np.ndarray:
    product = edge_interval * cloud_interval * t_arr
    return (inputs.alpha * x_arr
            + inputs.gamma * (1.0 - inputs.d / product) * inputs.y_effective)


def _pick_best(objective, rounds, x, edge_interval, cloud_interval):
    """Index of the winner under the documented tie-break.

    Maximize objective, then rounds; then minimize x, the interval product,
    and finally edge_interval.
    """
    product = np.asarray(edge_interval) * np.asarray(cloud_interval)
    order = np.lexsort((
        np.asarray(edge_interval, dtype=np.int64),
        product.astype(np.int64),
        np.asarray(x, dtype=np.int64),
        -np.asarray(rounds, dtype=np.int64),
        -np.asarray(objective, dtype=np.float64),
    ))
    return int(order[0])


def _split_budget(budget_mb: float, spend_mb: float) -> tuple[float, float]:
    """Split the budget into (u1, u2) with u1 >= spend and u1 + u2 == budget.

    Floating-point subtraction can leave u1 + (budget - u1) a final ulp away
    from the budget; alternate the complements until the identity holds
    exactly.
    """
    u1 = spend_mb
    u2 = budget_mb - u1
    for _ in range(5):
        if u1 + u2 == budget_mb and u1 >= spend_mb:
            return u1, u2
        u1 = budget_mb - u2
        if u1 < spend_mb:
            u2 = np.nextafter(u2, -np.inf)
            u1 = budget_mb - u2
    if u1 + u2 != budget_mb:
        raise AssertionError("could not split budget exactly")
    return u1, u2


def _finish_plan(inputs: AllocInputs, x: int, edge_interval: int, cloud_interval: int,
                 rounds: int, objective: float, degenerate: bool) -> AllocationPlan:
    spend = float(_stage1_spend(np.asarray([x], dtype=np.float64), inputs)[0])
    u1, u2 = _split_budget(inputs.budget_mb, spend)
    return AllocationPlan(
        u1_mb=u1,
        u2_mb=u2,
        pretrain_batch=int(x),
        edge_interval=int(edge_interval),
        cloud_interval=int(cloud_interval),
        cloud_rounds=int(rounds),
        objective=float(objective),
        degenerate=degenerate,
    )


def _search_pairs(inputs: AllocInputs) -> tuple[list[tuple[int, int]], bool]:
    """Interval pairs to search: strict candidates, else the degenerate (1, 1)."""
    strict = _candidate_pairs(inputs)
    feasible_strict = [
        pair for pair in strict
        if _max_rounds(np.zeros(1), _pair_per_round_mb(inputs, pair[1]), inputs)[0] >= 1
    ]
    if feasible_strict:
        return feasible_strict, False
    if _max_rounds(np.zeros(1), _pair_per_round_mb(inputs, 1), inputs)[0] >= 1:
        return [(1, 1)], True
    raise InfeasibleAllocation(
        f"budget {inputs.budget_mb} MB affords no cloud round for any candidate pair")


def solve_allocation(inputs: AllocInputs) -> AllocationPlan:
    """Maximize the effective-sample objective over all feasible plans.

    Per interval pair, scans the pretraining batch size and pairs each value
    with the maximal affordable round count (optimal because the objective
    is non-decreasing in rounds). Reduction across pairs uses the documented
    tie-break.
    """
    pairs, degenerate = _search_pairs(inputs)

    best = None  # (objective, rounds, x, ie, ic)
    for ie, ic in pairs:
        per_round = _pair_per_round_mb(inputs, ic)
        x_budget = int((inputs.budget_mb - inputs.release_mb - per_round)
                       // inputs.sample_size_mb)
        x_hi = min(inputs.max_pretrain, max(0, x_budget))
        xs = np.arange(0, x_hi + 1, dtype=np.float64)
        ts = _max_rounds(xs, per_round, inputs)
        feasible = ts >= 1
        if not feasible.any():
            continue
        xs, ts = xs[feasible], ts[feasible]
        objs = _objective_array(xs, ts, ie, ic, inputs)
        idx = _pick_best(objs, ts, xs, np.full(xs.shape, ie), np.full(xs.shape, ic))
        cand = (objs[idx], int(ts[idx]), int(xs[idx]), ie, ic)
        if best is None or _better(cand, best):
            best = cand

    if best is None:
        raise InfeasibleAllocation("no feasible plan within budget")
    obj, rounds, x, ie, ic = best
    return _finish_plan(inputs, x, ie, ic, rounds, float(obj), degenerate)


def _better(a, b) -> bool:
    """True if candidate a beats b under the tie-break; entries are
    (objective, rounds, x, edge_interval, cloud_interval)."""
    key_a = (a[0], a[1], -a[2], -(a[3] * a[4]), -a[3])
    key_b = (b[0], b[1], -b[2], -(b[3] * b[4]), -b[3])
    return key_a > key_b


def brute_force_oracle(inputs: AllocInputs, point_cap: int = ORACLE_POINT_CAP) -> AllocationPlan:
    """Exhaustively enumerate every feasible (x, I_e, I_c, T) tuple.

    Verification twin of solve_allocation: same feasible set, same objective
    arithmetic, same tie-break, but no structure is exploited beyond a cap
    on the enumeration size.
    """
    pairs, degenerate = _search_pairs(inputs)

    # Pre-count the enumeration to honour the cap before allocating grids.
    total_points = 0
    pair_grids = []
    for ie, ic in pairs:
        per_round = _pair_per_round_mb(inputs, ic)
        x_budget = int((inputs.budget_mb - inputs.release_mb - per_round)
                       // inputs.sample_size_mb)
        x_hi = min(inputs.max_pretrain, max(0, x_budget))
        xs = np.arange(0, x_hi + 1, dtype=np.float64)
        ts_max = _max_rounds(xs, per_round, inputs)
        total_points += int(ts_max.sum())
        pair_grids.append((ie, ic, xs, ts_max))
    if total_points > point_cap:
        raise SearchSpaceTooLarge(
            f"{total_points} feasible points exceed the cap of {point_cap}")
    if total_points == 0:
        raise InfeasibleAllocation("no feasible plan within budget")

    best = None
    for ie, ic, xs, ts_max in pair_grids:
        t_top = int(ts_max.max())
        if t_top < 1:
            continue
        t_all = np.arange(1, t_top + 1, dtype=np.int64)
        valid = t_all[None, :] <= ts_max[:, None]
        if not valid.any():
            continue
        x_grid = np.broadcast_to(xs[:, None], valid.shape)[valid]
        t_grid = np.broadcast_to(t_all[None, :], valid.shape)[valid]
        objs = _objective_array(x_grid, t_grid, ie, ic, inputs)
        idx = _pick_best(objs, t_grid, x_grid,
                         np.full(x_grid.shape, ie), np.full(x_grid.shape, ic))
        cand = (objs[idx], int(t_grid[idx]), int(x_grid[idx]), ie, ic)
        if best is None or _better(cand, best):
            best = cand

    obj, rounds, x, ie, ic = best
    return _finish_plan(inputs, x, ie, ic, rounds, float(obj), degenerate)


def check_plan(plan: AllocationPlan, inputs: AllocInputs) -> None:
    """Raise if a plan violates any allocation constraint."""
    if plan.u1_mb + plan.u2_mb != inputs.budget_mb:
        raise AssertionError("u1 + u2 must equal the budget exactly")
    if plan.u1_mb < 0 or not plan.u2_mb > 0:
        raise AssertionError("u1 must be >= 0 and u2 > 0")
    if plan.pretrain_batch < 0 or plan.pretrain_batch > inputs.max_pretrain:
        raise AssertionError("pretrain_batch out of range")
    if plan.pretrain_batch * inputs.sample_size_mb > plan.u1_mb:
        raise AssertionError("pretraining data does not fit in u1")
    if plan.cloud_rounds < 1:
        raise AssertionError("at least one cloud round is required")
    per_round = _pair_per_round_mb(inputs, plan.cloud_interval)
    if per_round * plan.cloud_rounds > plan.u2_mb:
        raise AssertionError("cloud rounds do not fit in u2")
    if not plan.degenerate and not plan.cloud_interval < plan.edge_interval:
        raise AssertionError("cloud_interval must be < edge_interval")
    if plan.degenerate and (plan.edge_interval, plan.cloud_interval) != (1, 1):
        raise AssertionError("degenerate plans must use the (1, 1) pair")
