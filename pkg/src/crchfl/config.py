"""Topology and run configuration: types, validation, INI parsing.

A run is fully described by a flat sectioned key-value file (INI syntax)
with sections [topology], [budget], [alloc], [train], [run]. Everything is
validated up front; no partially-constructed config ever escapes this
module.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace

MODES = ("CRCHFL", "HFL", "SFL")

# Training defaults (applied when the [train] section omits a key).
DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_ADAM_BETA1 = 0.9
DEFAULT_ADAM_BETA2 = 0.999
DEFAULT_WEIGHT_DECAY = 3e-3
DEFAULT_BATCH_SIZE = 32

# Allocator defaults. The discounting weights have no canonical values; these
# are the documented shipped defaults and should be set explicitly in any
# config used for reported results.
DEFAULT_ALPHA = 0.5
DEFAULT_GAMMA = 0.9
DEFAULT_D = 1.0
DEFAULT_Y_SCALE = 1.0
DEFAULT_EDGE_INTERVALS = (2, 3, 4)
DEFAULT_CLOUD_INTERVALS = (1,)

DEFAULT_PRETRAIN_EPOCHS = 5


class ConfigError(ValueError):
    """Invalid or missing configuration value; names the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


@dataclass(frozen=True)
class TopologySpec:
    """Static cloud-edge-vehicle topology with per-vehicle dataset sizes.

    train_sizes is flat, town-major: sizes for town 0's vehicles first, then
    town 1's, and so on. test_sizes has one entry per town.
    """

    num_towns: int
    vehicles_per_town: tuple[int, ...]
    train_sizes: tuple[int, ...]
    test_sizes: tuple[int, ...]

    def __post_init__(self):
        if self.num_towns < 1:
            raise ConfigError("num_towns", "must be a positive integer")
        if len(self.vehicles_per_town) != self.num_towns:
            raise ConfigError(
                "vehicles_per_town",
                f"length {len(self.vehicles_per_town)} != num_towns {self.num_towns}",
            )
        if any(k < 1 for k in self.vehicles_per_town):
            raise ConfigError("vehicles_per_town", "every town needs >= 1 vehicle")
        if len(self.train_sizes) != self.total_vehicles:
            raise ConfigError(
                "train_sizes",
                f"need one size per vehicle ({self.total_vehicles}), got {len(self.train_sizes)}",
            )
        if any(s <= 0 for s in self.train_sizes):
            raise ConfigError("train_sizes", "every per-vehicle sample count must be > 0")
        if len(self.test_sizes) != self.num_towns:
            raise ConfigError(
                "test_sizes",
                f"need one size per town ({self.num_towns}), got {len(self.test_sizes)}",
            )
        if any(s <= 0 for s in self.test_sizes):
            raise ConfigError("test_sizes", "every per-town test size must be > 0")

    @property
    def total_vehicles(self) -> int:
        return sum(self.vehicles_per_town)

    @property
    def total_train_samples(self) -> int:
        return sum(self.train_sizes)

    def vehicle_index(self, town: int, k: int) -> int:
        """Flat index of vehicle k (0-based) in the given town."""
        return sum(self.vehicles_per_town[:town]) + k

    def town_train_sizes(self, town: int) -> tuple[int, ...]:
        start = sum(self.vehicles_per_town[:town])
        return self.train_sizes[start:start + self.vehicles_per_town[town]]


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = DEFAULT_LEARNING_RATE
    adam_beta1: float = DEFAULT_ADAM_BETA1
    adam_beta2: float = DEFAULT_ADAM_BETA2
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")
        if not 0 < self.adam_beta1 < 1:
            raise ConfigError("adam_beta1", "must be in (0, 1)")
        if not 0 < self.adam_beta2 < 1:
            raise ConfigError("adam_beta2", "must be in (0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be a positive integer")


@dataclass(frozen=True)
class RunConfig:
    topology: TopologySpec
    budget_mb: float
    sample_size_mb: float
    model_size_mb: float
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    d: float = DEFAULT_D
    y_scale: float = DEFAULT_Y_SCALE
    candidate_edge_intervals: tuple[int, ...] = DEFAULT_EDGE_INTERVALS
    candidate_cloud_intervals: tuple[int, ...] = DEFAULT_CLOUD_INTERVALS
    mode: str = "CRCHFL"
    seed: int = 0
    train_hyper: TrainHyper = field(default_factory=TrainHyper)
    pretrain_epochs: int = DEFAULT_PRETRAIN_EPOCHS
    charge_pretrain_release: bool = True

    def __post_init__(self):
        if self.budget_mb < 0:
            raise ConfigError("budget_mb", "must be >= 0")
        if not self.sample_size_mb > 0:
            raise ConfigError("sample_size_mb", "must be > 0")
        if not self.model_size_mb > 0:
            raise ConfigError("model_size_mb", "must be > 0")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha", "must be in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma", "must be in [0, 1]")
        if self.d < 0:
            raise ConfigError("d", "must be >= 0")
        if not self.y_scale > 0:
            raise ConfigError("y_scale", "must be > 0")
        if not self.candidate_edge_intervals:
            raise ConfigError("candidate_edge_intervals", "must be non-empty")
        if not self.candidate_cloud_intervals:
            raise ConfigError("candidate_cloud_intervals", "must be non-empty")
        if any(v < 1 for v in self.candidate_edge_intervals):
            raise ConfigError("candidate_edge_intervals", "intervals must be >= 1")
        if any(v < 1 for v in self.candidate_cloud_intervals):
            raise ConfigError("candidate_cloud_intervals", "intervals must be >= 1")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.seed < 0:
            raise ConfigError("seed", "must be an unsigned integer")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs", "must be >= 0")

    def with_mode(self, mode: str) -> "RunConfig":
        return replace(self, mode=mode.upper())


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------

def _get(section, section_name: str, key: str) -> str:
    if key not in section:
        raise ConfigError(key, f"missing required key in [{section_name}]")
    return section[key]


def _parse_int(section, section_name: str, key: str, default=None) -> int:
    if key not in section:
        if default is None:
            raise ConfigError(key, f"missing required key in [{section_name}]")
        return default
    raw = section[key].strip()
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {raw!r}") from None


def _parse_float(section, section_name: str, key: str, default=None) -> float:
    if key not in section:
        if default is None:
            raise ConfigError(key, f"missing required key in [{section_name}]")
        return default
    raw = section[key].strip()
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}") from None


def _parse_bool(section, key: str, default: bool) -> bool:
    if key not in section:
        return default
    raw = section[key].strip().lower()
    if raw in ("true", "yes", "1", "on"):
        return True
    if raw in ("false", "no", "0", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {section[key]!r}")


def _parse_int_list(section, section_name: str, key: str) -> tuple[int, ...]:
    raw = _get(section, section_name, key).strip().strip("[]")
    if not raw:
        raise ConfigError(key, "list must be non-empty")
    out = []
    for part in raw.split(","):
        part = part.strip()
        try:
            out.append(int(part))
        except ValueError:
            raise ConfigError(key, f"expected comma-separated integers, got {part!r}") from None
    return tuple(out)


def parse_config_text(text: str) -> RunConfig:
    """Parse and validate a config from INI-formatted text."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", f"not a valid sectioned key-value file: {exc}") from None

    for name in ("topology", "budget", "alloc", "train", "run"):
        if name not in parser:
            parser.add_section(name)

    topo_sec = parser["topology"]
    topology = TopologySpec(
        num_towns=_parse_int(topo_sec, "topology", "num_towns"),
        vehicles_per_town=_parse_int_list(topo_sec, "topology", "vehicles_per_town"),
        train_sizes=_parse_int_list(topo_sec, "topology", "train_sizes"),
        test_sizes=_parse_int_list(topo_sec, "topology", "test_sizes"),
    )

    budget_sec = parser["budget"]
    alloc_sec = parser["alloc"]
    train_sec = parser["train"]
    run_sec = parser["run"]

    hyper = TrainHyper(
        learning_rate=_parse_float(train_sec, "train", "learning_rate", DEFAULT_LEARNING_RATE),
        adam_beta1=_parse_float(train_sec, "train", "adam_beta1", DEFAULT_ADAM_BETA1),
        adam_beta2=_parse_float(train_sec, "train", "adam_beta2", DEFAULT_ADAM_BETA2),
        weight_decay=_parse_float(train_sec, "train", "weight_decay", DEFAULT_WEIGHT_DECAY),
        batch_size=_parse_int(train_sec, "train", "batch_size", DEFAULT_BATCH_SIZE),
    )

    mode = run_sec.get("mode", "CRCHFL").strip().upper()

    if "candidate_edge_intervals" in alloc_sec:
        edge_cands = _parse_int_list(alloc_sec, "alloc", "candidate_edge_intervals")
    else:
        edge_cands = DEFAULT_EDGE_INTERVALS
    if "candidate_cloud_intervals" in alloc_sec:
        cloud_cands = _parse_int_list(alloc_sec, "alloc", "candidate_cloud_intervals")
    else:
        cloud_cands = DEFAULT_CLOUD_INTERVALS

    return RunConfig(
        topology=topology,
        budget_mb=_parse_float(budget_sec, "budget", "budget_mb"),
        sample_size_mb=_parse_float(budget_sec, "budget", "sample_size_mb"),
        model_size_mb=_parse_float(budget_sec, "budget", "model_size_mb"),
        alpha=_parse_float(alloc_sec, "alloc", "alpha", DEFAULT_ALPHA),
        gamma=_parse_float(alloc_sec, "alloc", "gamma", DEFAULT_GAMMA),
        d=_parse_float(alloc_sec, "alloc", "d", DEFAULT_D),
        y_scale=_parse_float(alloc_sec, "alloc", "y_scale", DEFAULT_Y_SCALE),
        candidate_edge_intervals=edge_cands,
        candidate_cloud_intervals=cloud_cands,
        mode=mode,
        seed=_parse_int(run_sec, "run", "seed", 0),
        train_hyper=hyper,
        pretrain_epochs=_parse_int(run_sec, "run", "pretrain_epochs", DEFAULT_PRETRAIN_EPOCHS),
        charge_pretrain_release=_parse_bool(budget_sec, "charge_pretrain_release", True),
    )


def parse_config(path) -> RunConfig:
    """Read, parse, and validate the run configuration file at `path`."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _fmt_float(x: float) -> str:
    return format(x, ".17g")


def serialize_config(config: RunConfig) -> str:
    """Render a RunConfig back to INI text; parse_config_text round-trips it."""
    parser = configparser.ConfigParser()
    parser["topology"] = {
        "num_towns": str(config.topology.num_towns),
        "vehicles_per_town": ", ".join(map(str, config.topology.vehicles_per_town)),
        "train_sizes": ", ".join(map(str, config.topology.train_sizes)),
        "test_sizes": ", ".join(map(str, config.topology.test_sizes)),
    }
    parser["budget"] = {
        "budget_mb": _fmt_float(config.budget_mb),
        "sample_size_mb": _fmt_float(config.sample_size_mb),
        "model_size_mb": _fmt_float(config.model_size_mb),
        "charge_pretrain_release": str(config.charge_pretrain_release).lower(),
    }
    parser["alloc"] = {
        "alpha": _fmt_float(config.alpha),
        "gamma": _fmt_float(config.gamma),
        "d": _fmt_float(config.d),
        "y_scale": _fmt_float(config.y_scale),
        "candidate_edge_intervals": ", ".join(map(str, config.candidate_edge_intervals)),
        "candidate_cloud_intervals": ", ".join(map(str, config.candidate_cloud_intervals)),
    }
    parser["train"] = {
        "learning_rate": _fmt_float(config.train_hyper.learning_rate),
        "adam_beta1": _fmt_float(config.train_hyper.adam_beta1),
        "adam_beta2": _fmt_float(config.train_hyper.adam_beta2),
        "weight_decay": _fmt_float(config.train_hyper.weight_decay),
        "batch_size": str(config.train_hyper.batch_size),
    }
    parser["run"] = {
        "mode": config.mode,
        "seed": str(config.seed),
        "pretrain_epochs": str(config.pretrain_epochs),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
