"""Throughput accounting: every transfer is charged against the budget.

Accounting convention: one event is one one-way transfer. A model exchange
between two nodes (upload of the local model, download of the aggregate) is
a pair of events of model_size_mb each, which is where the factor 2 in the
per-round cost 2*E*M comes from. M counts node pairs touched between two
adjacent cloud aggregations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .config import TopologySpec


class TransferKind(str, Enum):
    DATA_UPLOAD = "DataUpload"
    MODEL_UP = "ModelUp"
    MODEL_DOWN = "ModelDown"


class Link(str, Enum):
    VEHICLE_EDGE = "VehicleEdge"
    EDGE_CLOUD = "EdgeCloud"
    VEHICLE_CLOUD = "VehicleCloud"


class Stage(str, Enum):
    I = "I"
    II = "II"
    III = "III"


@dataclass(frozen=True)
class TransferEvent:
    kind: TransferKind
    link: Link
    size_mb: float
    stage: Stage
    round_index: int

    def __post_init__(self):
        if not self.size_mb > 0:
            raise ValueError(f"transfer size must be > 0, got {self.size_mb}")
        if self.kind is TransferKind.DATA_UPLOAD and self.stage is not Stage.I:
            raise ValueError("data uploads only occur in stage I")
        if self.round_index < 0:
            raise ValueError("round_index must be >= 0")


@dataclass
class ThroughputLedger:
    """Append-only budget ledger. Single writer; reads may snapshot anytime."""

    budget_mb: float
    consumed_mb: float = 0.0
    events: list[TransferEvent] = field(default_factory=list)
    # Running totals recorded at append time, one per event, so the log can
    # be exported and replay-checked without recomputation.
    consumed_after: list[float] = field(default_factory=list)

    def try_consume(self, event: TransferEvent) -> bool:
        """Charge `event` if it fits; True on Accepted, False on Insufficient.

        An Insufficient result leaves the ledger untouched.
        """
        if not event.size_mb > 0:
            raise ValueError(f"transfer size must be > 0, got {event.size_mb}")
        if self.consumed_mb + event.size_mb > self.budget_mb:
            return False
        self.consumed_mb += event.size_mb
        self.events.append(event)
        self.consumed_after.append(self.consumed_mb)
        return True

    def affordable(self, size_mb: float) -> bool:
        return self.consumed_mb + size_mb <= self.budget_mb

    @property
    def remaining_mb(self) -> float:
        return self.budget_mb - self.consumed_mb

    def replay_consumed(self) -> float:
        """Re-run the event log through a fresh ledger; returns its total."""
        fresh = ThroughputLedger(budget_mb=self.budget_mb)
        for event in self.events:
            if not fresh.try_consume(event):
                raise RuntimeError("event log does not replay within budget")
        return fresh.consumed_mb

    def csv_rows(self) -> list[dict]:
        rows = []
        for i, (event, after) in enumerate(zip(self.events, self.consumed_after)):
            rows.append({
                "index": i,
                "stage": event.stage.value,
                "round": event.round_index,
                "kind": event.kind.value,
                "link": event.link.value,
                "size_mb": event.size_mb,
                "consumed_after_mb": after,
            })
        return rows


def transfers_per_cloud_round(topology: TopologySpec, mode: str, cloud_interval: int = 1) -> int:
    """Number M of paired model transfers between two adjacent cloud aggregations.

    SFL: one vehicle<->cloud pair per vehicle. HFL/CRCHFL: each of the
    cloud_interval edge aggregations costs one vehicle<->edge pair per
    vehicle, plus one edge<->cloud pair per edge for the cloud aggregation
    itself.
    """
    if cloud_interval < 1:
        raise ValueError("cloud_interval must be >= 1")
    total_vehicles = topology.total_vehicles
    if mode.upper() == "SFL":
        return total_vehicles
    return cloud_interval * total_vehicles + topology.num_towns


def rounds_affordable(u2_mb: float, model_size_mb: float, transfers_per_round: int) -> int:
    """Largest T with 2 * model_size_mb * transfers_per_round * T <= u2_mb."""
    if not model_size_mb > 0:
        raise ValueError("model_size_mb must be > 0")
    if transfers_per_round < 1:
        raise ValueError("transfers_per_round must be >= 1")
    per_round = 2.0 * model_size_mb * transfers_per_round
    return max(0, int(u2_mb // per_round))


def pretrain_release_mb(topology: TopologySpec, model_size_mb: float) -> float:
    """Cost of releasing the pretrained model cloud -> edges -> vehicles.

    One downlink per edge plus one per vehicle, each of model size. Unlike a
    federated round there is no paired uplink: the release is one-way.
    """
    return model_size_mb * (topology.num_towns + topology.total_vehicles)
