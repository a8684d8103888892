"""Communication-budget-constrained hierarchical federated learning, desk scale.

Simulates three-tier (vehicle / edge / cloud) federated training in which
every transferred byte -- pretraining data uploads as well as model uplinks
and downlinks -- is charged against a fixed throughput budget, and solves
the allocation problem that splits that budget between pretraining samples
and federated rounds.
"""

from .config import ConfigError, RunConfig, TopologySpec, TrainHyper, parse_config
from .ledger import ThroughputLedger, TransferEvent
from .allocator import AllocationPlan, AllocInputs, solve_allocation

__version__ = "0.1.0"

__all__ = [
    "AllocationPlan",
    "AllocInputs",
    "ConfigError",
    "RunConfig",
    "ThroughputLedger",
    "TopologySpec",
    "TrainHyper",
    "TransferEvent",
    "parse_config",
    "solve_allocation",
    "__version__",
]
