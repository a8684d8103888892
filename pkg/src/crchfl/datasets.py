"""Deterministic synthetic driving data with controlled inter-town shift.

Each town shifts the input distribution of a shared hidden teacher, so a
model trained in one town faces a real covariate shift in the other. Steer
is produced as a continuous value in [-1, 1] and quantized to 7 levels; the
DAC maps a level back to its bin center.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, TopologySpec
from .model import STEER_LEVELS, ModelDims, SampleBatch

# Reserved stream id for per-town test sets (vehicles use their own index).
TEST_STREAM = 0xF00D

# Task constants shared by every town. The teacher mixes a handful of input
# coordinates so the task is learnable from either feature block alone. The
# inter-town shift and steer bias are strong enough that a model trained in
# one town measurably degrades in the other.
_SHIFT_SCALE = 2.0
_STEER_GAIN = 1.7
_STEER_BIAS_SCALE = 0.4
_DEFAULT_NOISE = 0.25


@dataclass(frozen=True)
class TownProfile:
    town_id: int
    feature_shift: np.ndarray  # length F1 + F2 mean offset
    steer_bias: float
    noise_scale: float

    def __post_init__(self):
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be > 0")


def default_profiles(topology: TopologySpec, dims: ModelDims,
                     shift_scale: float = _SHIFT_SCALE,
                     noise_scale: float = _DEFAULT_NOISE) -> list[TownProfile]:
    """One profile per town: deterministic alternating-sign mean offsets."""
    total = dims.features1 + dims.features2
    profiles = []
    for town in range(topology.num_towns):
        direction = np.where(np.arange(total) % 2 == 0, 1.0, -1.0)
        # Towns sit at symmetric offsets around the origin.
        magnitude = shift_scale * (town - (topology.num_towns - 1) / 2.0)
        profiles.append(TownProfile(
            town_id=town,
            feature_shift=direction * magnitude,
            steer_bias=_STEER_BIAS_SCALE * magnitude,
            noise_scale=noise_scale,
        ))
    return profiles


def digitize_steer(steer: float) -> int:
    """Quantize a steer value in [-1, 1] (clamped) to a level in {0..6}."""
    s = min(1.0, max(-1.0, steer))
    return min(STEER_LEVELS - 1, int((s + 1.0) // (2.0 / STEER_LEVELS)))


def dac_steer(level: int) -> float:
    """Bin center of a steer level: -1 + (2/7) * (level + 0.5)."""
    if not 0 <= level < STEER_LEVELS:
        raise ValueError(f"steer level must lie in [0, {STEER_LEVELS - 1}]")
    return -1.0 + (2.0 / STEER_LEVELS) * (level + 0.5)


def _digitize_array(steer: np.ndarray) -> np.ndarray:
    s = np.clip(steer, -1.0, 1.0)
    return np.minimum(STEER_LEVELS - 1,
                      ((s + 1.0) // (2.0 / STEER_LEVELS)).astype(np.int64))


def _teacher_weights(dims: ModelDims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed smooth teacher shared across towns."""
    rng = np.random.default_rng(20230517)
    w_throttle = rng.normal(0.0, 1.0, dims.features1) / np.sqrt(dims.features1)
    w_brake = rng.normal(0.0, 1.0, dims.features1) / np.sqrt(dims.features1)
    w_steer = rng.normal(0.0, 1.0, dims.features2) / np.sqrt(dims.features2)
    return w_throttle, w_brake, w_steer


def generate_vehicle_dataset(profile: TownProfile, vehicle_index: int,
                             n_samples: int, seed: int,
                             dims: ModelDims = ModelDims()) -> SampleBatch:
    """Deterministic per-vehicle dataset; same arguments give the same batch.

    Features are standard normal shifted by the town mean; actions come from
    the shared teacher plus town bias and noise.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be > 0")
    rng = np.random.default_rng([seed, profile.town_id, vehicle_index])
    f1, f2 = dims.features1, dims.features2
    raw = rng.normal(0.0, 1.0, (n_samples, f1 + f2)) + profile.feature_shift
    features1 = raw[:, :f1]
    features2 = raw[:, f1:]

    w_throttle, w_brake, w_steer = _teacher_weights(dims)
    noise = profile.noise_scale
    throttle = _squash(features1 @ w_throttle + rng.normal(0.0, noise, n_samples))
    brake = _squash(-(features1 @ w_brake) + rng.normal(0.0, noise, n_samples))
    steer_raw = _saturate(_STEER_GAIN * (features2 @ w_steer)
                          + profile.steer_bias
                          + rng.normal(0.0, noise, n_samples))
    return SampleBatch(
        features1=features1,
        features2=features2,
        throttle_brake=np.stack([throttle, brake], axis=1),
        steer_level=_digitize_array(steer_raw),
    )


def _squash(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _saturate(x: np.ndarray) -> np.ndarray:
    # Piecewise-linear ramp clipped to [-1, 1].
    return np.clip(x, -1.0, 1.0)


def generate_town_testset(profile: TownProfile, n_samples: int, seed: int,
                          dims: ModelDims = ModelDims()) -> SampleBatch:
    """Held-out per-town test set drawn from a reserved stream."""
    return generate_vehicle_dataset(profile, TEST_STREAM, n_samples, seed, dims)


def dataset_to_csv(batch: SampleBatch, path) -> None:
    """Dump a batch for inspection: one row per sample, 17-digit floats."""
    f1 = batch.features1.shape[1]
    f2 = batch.features2.shape[1]
    header = ([f"feature1_{i}" for i in range(f1)]
              + [f"feature2_{i}" for i in range(f2)]
              + ["throttle", "brake", "steer_level"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(batch)):
            row = [format(v, ".17g") for v in batch.features1[i]]
            row += [format(v, ".17g") for v in batch.features2[i]]
            row += [format(batch.throttle_brake[i, 0], ".17g"),
                    format(batch.throttle_brake[i, 1], ".17g"),
                    str(int(batch.steer_level[i]))]
            writer.writerow(row)


def build_datasets(config: RunConfig, dims: ModelDims = ModelDims(),
                   profiles: list[TownProfile] | None = None):
    """Training sets per vehicle (town-major) plus the combined test set."""
    topo = config.topology
    if profiles is None:
        profiles = default_profiles(topo, dims)
    train: list[SampleBatch] = []
    for town in range(topo.num_towns):
        sizes = topo.town_train_sizes(town)
        for k, size in enumerate(sizes):
            train.append(generate_vehicle_dataset(profiles[town], k, size,
                                                  config.seed, dims))
    test = SampleBatch.concat([
        generate_town_testset(profiles[town], topo.test_sizes[town], config.seed, dims)
        for town in range(topo.num_towns)
    ])
    return train, test
