"""Two-branch MLP learner: forward pass, losses, gradients, Adam, metrics.

Branch 1 maps its feature block to throttle/brake predictions squashed into
[0, 1] (trained with mean-squared error); branch 2 maps the second feature
block to 7 steer-level logits (trained with cross-entropy). The parameter
blocks of the two branches are disjoint and live in one flat vector so that
aggregation and transfer-size bookkeeping can treat a model as a single
array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import TrainHyper

STEER_LEVELS = 7
ADAM_EPS = 1e-8

DEFAULT_FEATURES1 = 16
DEFAULT_FEATURES2 = 48
DEFAULT_HIDDEN1 = (32, 16)
DEFAULT_HIDDEN2 = (64, 32)


@dataclass(frozen=True)
class SampleBatch:
    """A batch of surrogate sensor features and expert actions."""

    features1: np.ndarray    # (n, F1) branch-1 input
    features2: np.ndarray    # (n, F2) branch-2 input
    throttle_brake: np.ndarray  # (n, 2) targets in [0, 1]
    steer_level: np.ndarray  # (n,) int labels in {0..6}

    def __post_init__(self):
        # The compiled kernels take C-contiguous float64 buffers.
        object.__setattr__(self, "features1",
                           np.ascontiguousarray(self.features1, dtype=np.float64))
        object.__setattr__(self, "features2",
                           np.ascontiguousarray(self.features2, dtype=np.float64))
        object.__setattr__(self, "throttle_brake",
                           np.ascontiguousarray(self.throttle_brake, dtype=np.float64))
        object.__setattr__(self, "steer_level",
                           np.ascontiguousarray(self.steer_level, dtype=np.int64))
        n = self.features1.shape[0]
        if (self.features2.shape[0] != n or self.throttle_brake.shape[0] != n
                or self.steer_level.shape[0] != n):
            raise ValueError("inconsistent batch dimension across fields")
        if self.throttle_brake.shape[1] != 2:
            raise ValueError("throttle_brake must have two columns")
        if self.steer_level.min(initial=0) < 0 or self.steer_level.max(initial=0) >= STEER_LEVELS:
            raise ValueError(f"steer_level must lie in [0, {STEER_LEVELS - 1}]")

    def __len__(self) -> int:
        return self.features1.shape[0]

    def take(self, idx: np.ndarray) -> "SampleBatch":
        return SampleBatch(self.features1[idx], self.features2[idx],
                           self.throttle_brake[idx], self.steer_level[idx])

    @staticmethod
    def concat(batches: list["SampleBatch"]) -> "SampleBatch":
        return SampleBatch(
            np.concatenate([b.features1 for b in batches]),
            np.concatenate([b.features2 for b in batches]),
            np.concatenate([b.throttle_brake for b in batches]),
            np.concatenate([b.steer_level for b in batches]),
        )


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    consumed_mb: float
    loss: float
    accuracy: float

    def to_dict(self) -> dict:
        return {"round": self.round, "consumed_mb": self.consumed_mb,
                "loss": self.loss, "accuracy": self.accuracy}


@dataclass(frozen=True)
class ModelDims:
    features1: int = DEFAULT_FEATURES1
    features2: int = DEFAULT_FEATURES2
    hidden1: tuple[int, int] = DEFAULT_HIDDEN1
    hidden2: tuple[int, int] = DEFAULT_HIDDEN2

    def branch_shapes(self, branch: int) -> list[tuple[str, tuple[int, ...]]]:
        if branch == 1:
            dims = (self.features1, *self.hidden1, 2)
        else:
            dims = (self.features2, *self.hidden2, STEER_LEVELS)
        shapes = []
        for layer in range(3):
            shapes.append((f"b{branch}.w{layer + 1}", (dims[layer], dims[layer + 1])))
            shapes.append((f"b{branch}.b{layer + 1}", (dims[layer + 1],)))
        return shapes


class ModelLayout:
    """Maps named tensors (branch, layer, weight/bias) onto one flat array."""

    def __init__(self, dims: ModelDims):
        self.dims = dims
        self.entries: list[tuple[str, tuple[int, ...], int]] = []
        offset = 0
        for name, shape in dims.branch_shapes(1) + dims.branch_shapes(2):
            self.entries.append((name, shape, offset))
            offset += int(np.prod(shape))
        self.total_size = offset
        self._by_name = {name: (shape, off) for name, shape, off in self.entries}

    def view(self, values: np.ndarray, name: str) -> np.ndarray:
        shape, off = self._by_name[name]
        return values[off:off + int(np.prod(shape))].reshape(shape)

    def describe(self) -> list[dict]:
        return [{"name": n, "shape": list(s), "offset": o} for n, s, o in self.entries]


@dataclass
class ParamVector:
    """Flat float64 parameter vector plus the layout that names its blocks."""

    values: np.ndarray
    layout: ModelLayout

    def view(self, name: str) -> np.ndarray:
        return self.layout.view(self.values, name)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def to_bytes(self) -> bytes:
        header = json.dumps({"layout": self.layout.describe(),
                             "dims": {
                                 "features1": self.layout.dims.features1,
                                 "features2": self.layout.dims.features2,
                                 "hidden1": list(self.layout.dims.hidden1),
                                 "hidden2": list(self.layout.dims.hidden2),
                             }},
                            sort_keys=True).encode("utf-8")
        payload = np.ascontiguousarray(self.values, dtype="<f8").tobytes()
        return len(header).to_bytes(8, "little") + header + payload

    @staticmethod
    def from_bytes(blob: bytes) -> "ParamVector":
        header_len = int.from_bytes(blob[:8], "little")
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
        dims = ModelDims(
            features1=header["dims"]["features1"],
            features2=header["dims"]["features2"],
            hidden1=tuple(header["dims"]["hidden1"]),
            hidden2=tuple(header["dims"]["hidden2"]),
        )
        layout = ModelLayout(dims)
        values = np.frombuffer(blob[8 + header_len:], dtype="<f8").astype(np.float64)
        if values.size != layout.total_size:
            raise ValueError("payload size does not match the layout")
        return ParamVector(values, layout)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @staticmethod
    def zeros(layout: ModelLayout) -> "AdamState":
        return AdamState(np.zeros(layout.total_size), np.zeros(layout.total_size))

    def copy(self) -> "AdamState":
        return AdamState(self.first_moment.copy(), self.second_moment.copy(),
                         self.step_count)


@dataclass
class TwoBranchModel:
    dims: ModelDims
    params: ParamVector

    @property
    def layout(self) -> ModelLayout:
        return self.params.layout


def init_params(dims: ModelDims, rng: np.random.Generator) -> ParamVector:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    layout = ModelLayout(dims)
    values = np.empty(layout.total_size)
    params = ParamVector(values, layout)
    for name, shape, _ in layout.entries:
        if name.endswith(("w1", "w2", "w3")):
            fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params.view(name)[...] = rng.uniform(-bound, bound, size=shape)
        else:
            # Bias bound reuses the fan-in of its weight matrix.
            w_shape = layout._by_name[name.replace(".b", ".w")][0]
            bound = 1.0 / np.sqrt(w_shape[0])
            params.view(name)[...] = rng.uniform(-bound, bound, size=shape)
    return params


def new_model(dims: ModelDims, rng: np.random.Generator) -> TwoBranchModel:
    return TwoBranchModel(dims, init_params(dims, rng))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _branch_params(params: ParamVector, branch: int):
    v = params.view
    b = f"b{branch}"
    return (v(f"{b}.w1"), v(f"{b}.b1"), v(f"{b}.w2"), v(f"{b}.b2"),
            v(f"{b}.w3"), v(f"{b}.b3"))


def _check_batch(model: TwoBranchModel, batch: SampleBatch) -> None:
    if batch.features1.shape[1] != model.dims.features1:
        raise ValueError(
            f"branch-1 feature dim {batch.features1.shape[1]} != model {model.dims.features1}")
    if batch.features2.shape[1] != model.dims.features2:
        raise ValueError(
            f"branch-2 feature dim {batch.features2.shape[1]} != model {model.dims.features2}")


def forward(model: TwoBranchModel, batch: SampleBatch):
    """Returns (predictions, logits): throttle/brake in [0, 1] and steer logits."""
    _check_batch(model, batch)
    *_, out1 = kernels.branch_forward(batch.features1, *_branch_params(model.params, 1))
    *_, logits = kernels.branch_forward(batch.features2, *_branch_params(model.params, 2))
    if not np.isfinite(out1).all():
        raise FloatingPointError("non-finite output in branch 1")
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite output in branch 2")
    return _sigmoid(out1), logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _forward_full(model: TwoBranchModel, batch: SampleBatch):
    """Shared forward used by both the gradient and evaluation paths."""
    _check_batch(model, batch)
    a1_1, a2_1, out1 = kernels.branch_forward(batch.features1, *_branch_params(model.params, 1))
    a1_2, a2_2, logits = kernels.branch_forward(batch.features2, *_branch_params(model.params, 2))
    pred = _sigmoid(out1)
    probs = _softmax(logits)
    n = len(batch)
    mse = float(np.mean((pred - batch.throttle_brake) ** 2))
    picked = probs[np.arange(n), batch.steer_level]
    ce = float(np.mean(-np.log(picked)))
    return (a1_1, a2_1, pred), (a1_2, a2_2, logits, probs), mse, ce


def loss_and_grad(model: TwoBranchModel, batch: SampleBatch):
    """Total loss (branch-1 MSE + branch-2 cross-entropy) and its exact gradient.

    The gradient covers the data loss only; weight decay is the optimizer's
    business (see adam_step), which keeps this output checkable against
    finite differences of the returned loss.
    """
    (a1_1, a2_1, pred), (a1_2, a2_2, logits, probs), mse, ce = _forward_full(model, batch)
    n = len(batch)
    loss = mse + ce
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    # d(mse)/d(pre-activation) through the sigmoid.
    dpred = 2.0 * (pred - batch.throttle_brake) / pred.size
    dout1 = dpred * pred * (1.0 - pred)
    donehot = probs.copy()
    donehot[np.arange(n), batch.steer_level] -= 1.0
    dlogits = donehot / n

    w_1 = _branch_params(model.params, 1)
    w_2 = _branch_params(model.params, 2)
    g1 = kernels.branch_backward(batch.features1, a1_1, a2_1, dout1, w_1[2], w_1[4])
    g2 = kernels.branch_backward(batch.features2, a1_2, a2_2, dlogits, w_2[2], w_2[4])

    grad = np.empty(model.layout.total_size)
    gview = ParamVector(grad, model.layout)
    for branch, parts in ((1, g1), (2, g2)):
        names = [f"b{branch}.{t}{layer}" for layer in (1, 2, 3) for t in ("w", "b")]
        for name, part in zip(names, parts):
            gview.view(name)[...] = part
    return loss, grad


def adam_step(params: ParamVector, grad: np.ndarray, state: AdamState,
              hyper: TrainHyper) -> tuple[ParamVector, AdamState]:
    """One Adam update (in place on params and state; both are returned).

    Weight decay is added to the gradient before the moment updates, and the
    usual bias correction is applied.
    """
    if grad.shape != params.values.shape:
        raise ValueError("gradient shape does not match parameters")
    state.step_count += 1
    kernels.adam_update(params.values, grad, state.first_moment, state.second_moment,
                        state.step_count, hyper.learning_rate, hyper.adam_beta1,
                        hyper.adam_beta2, ADAM_EPS, hyper.weight_decay)
    return params, state


def evaluate(model: TwoBranchModel, test_set: SampleBatch, round: int,
             consumed_mb: float) -> MetricsRecord:
    """Loss and steer accuracy over the full test set."""
    if len(test_set) == 0:
        raise ValueError("test set must be non-empty")
    _, (_, _, logits, _), mse, ce = _forward_full(model, test_set)
    predicted = logits.argmax(axis=1)
    accuracy = float(np.mean(predicted == test_set.steer_level))
    return MetricsRecord(round=round, consumed_mb=consumed_mb,
                         loss=mse + ce, accuracy=accuracy)
