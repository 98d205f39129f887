"""Fully-connected classifiers with ReLU or sigmoid hidden layers.

Layer ``i`` (1-based) owns a weight matrix of shape ``(s_i, fan_in)``.  The
first layer sees the input features plus a constant 1 appended as the last
column; that column is the only bias in the network.  All arithmetic is in
float64.

The per-sample losses are

* ``mse_linear``: ``E = 0.5 * sum_j (z_Nj - y_j)**2`` with a linear output,
* ``ce_softmax``: ``E = -sum_j y_j log p_j`` with ``p = softmax(z_N)``,

so that the output delta is ``output - target`` in both cases.  Batch losses
and gradients are means over the batch.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .datasets import Dataset
from .errors import ConfigError, NumericError, TrainingError

ACTIVATIONS = ("relu", "sigmoid")
LOSSES = ("mse_linear", "ce_softmax")
OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...]
    feature_dim: int
    hidden_activation: str = "relu"
    loss: str = "mse_linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if not sizes:
            raise ConfigError("layer_sizes must not be empty")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"layer sizes must be positive: {sizes}")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigError(f"hidden_activation must be one of {ACTIVATIONS}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")

    @property
    def depth(self) -> int:
        """Number of layers with weights, output included (``N``)."""
        return len(self.layer_sizes)

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    def weight_shapes(self) -> list[tuple[int, int]]:
        fan_ins = (self.feature_dim + 1,) + self.layer_sizes[:-1]
        return list(zip(self.layer_sizes, fan_ins))

    @classmethod
    def from_grid(cls, depth, width, feature_dim, class_count, **kw):
        """``depth`` hidden layers of ``width`` nodes plus the output layer."""
        return cls((width,) * depth + (class_count,), feature_dim, **kw)


@dataclass(eq=False)
class Mlp:
    weights: list[np.ndarray]
    config: MlpConfig

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        check_weights(self.weights, self.config)

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], self.config)

    @property
    def bias(self) -> np.ndarray:
        return self.weights[0][:, -1]


def check_weights(weights, config: MlpConfig):
    shapes = [np.shape(w) for w in weights]
    if shapes != config.weight_shapes():
        raise ValueError(
            f"weight shapes {shapes} do not match config {config.weight_shapes()}"
        )


def init_normalized_uniform(config: MlpConfig, seed: int) -> Mlp:
    """Normalized uniform (Glorot) initialization with zero bias.

    Every layer draws from ``U(-r, r)`` with ``r = sqrt(6 / (fan_in + fan_out))``;
    for the first layer ``fan_in`` counts the bias column.
    """
    rng = np.random.default_rng(seed)
    weights = []
    for fan_out, fan_in in config.weight_shapes():
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
    weights[0][:, -1] = 0.0
    return Mlp(weights, config)


# -------------------------------------------------------------------- forward


@dataclass(eq=False)
class ForwardTrace:
    """Pre-activations, activations and binary switch states per layer.

    ``pre[i-1]``, ``act[i-1]`` and ``switches[i-1]`` belong to layer ``i``.
    Arrays are 1-D for a single sample and ``(n, s_i)`` for a batch.
    ``inputs`` is the augmented input ``a_0`` (features with a trailing 1).
    """

    inputs: np.ndarray
    pre: list[np.ndarray]
    act: list[np.ndarray]
    switches: list[np.ndarray]
    hidden_activation: str = "relu"
    loss: str = "mse_linear"

    @property
    def output(self) -> np.ndarray:
        return self.act[-1]

    @property
    def depth(self) -> int:
        return len(self.pre)

    def activation(self, layer: int) -> np.ndarray:
        """``a_layer``; layer 0 is the augmented input."""
        return self.inputs if layer == 0 else self.act[layer - 1]

    def sample(self, index: int) -> "ForwardTrace":
        return ForwardTrace(
            self.inputs[index],
            [z[index] for z in self.pre],
            [a[index] for a in self.act],
            [t[index] for t in self.switches],
            self.hidden_activation,
            self.loss,
        )


def augment(features: np.ndarray) -> np.ndarray:
    ones = np.ones(features.shape[:-1] + (1,))
    return np.concatenate([features, ones], axis=-1)


def _check_finite(arr, layer, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what} in layer {layer}")


def forward(mlp: Mlp, features) -> ForwardTrace:
    """Run ``features`` (one sample or a batch) through ``mlp``."""
    x = np.asarray(features, dtype=np.float64)
    cfg = mlp.config
    if x.shape[-1] != cfg.feature_dim or x.ndim not in (1, 2):
        raise ValueError(
            f"expected features of length {cfg.feature_dim}, got shape {x.shape}"
        )
    a = augment(x)
    trace = ForwardTrace(a, [], [], [], cfg.hidden_activation, cfg.loss)
    n_layers = cfg.depth
    for i, w in enumerate(mlp.weights, start=1):
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ w.T
        _check_finite(z, i, "pre-activation")
        if i < n_layers:
            if cfg.hidden_activation == "relu":
                t = z > 0
                a = np.where(t, z, 0.0)
            else:
                a = expit(z)
                t = a > 0.5
        elif cfg.loss == "mse_linear":
            a = z
            t = z > 0
        else:
            a = softmax(z, axis=-1)
            t = a > 0.5
        trace.pre.append(z)
        trace.act.append(a)
        trace.switches.append(t)
    return trace


def predict(mlp: Mlp, features, chunk: int = 8192) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], chunk):
        out[start : start + chunk] = np.argmax(
            forward(mlp, x[start : start + chunk]).output, axis=-1
        )
    return out


def evaluate(mlp: Mlp, data: Dataset) -> tuple[float, float]:
    """Return ``(accuracy, error)`` of argmax predictions on ``data``."""
    if data.feature_dim != mlp.config.feature_dim:
        raise ValueError("dataset feature_dim does not match the network")
    if len(data) == 0:
        return float("nan"), float("nan")
    acc = float(np.mean(predict(mlp, data.features) == data.labels))
    return acc, 1.0 - acc


# ------------------------------------------------------------------- gradients


def _is_one_hot(target) -> bool:
    t = np.asarray(target)
    return bool(
        np.all((t == 0) | (t == 1)) and np.all(np.sum(t, axis=-1) == 1)
    )


def output_delta(trace: ForwardTrace, target, loss: str | None = None) -> np.ndarray:
    """Derivative of the per-sample loss w.r.t. the output pre-activations.

    Both supported losses give ``output - target``: linear outputs for
    ``mse_linear`` and softmax probabilities for ``ce_softmax`` (which needs a
    one-hot target for the identity to hold).
    """
    loss = loss or trace.loss
    y = np.asarray(target, dtype=np.float64)
    if y.shape != trace.output.shape:
        raise ValueError(f"target shape {y.shape} != output shape {trace.output.shape}")
    if loss == "ce_softmax":
        if not _is_one_hot(y):
            raise ValueError("ce_softmax output delta requires one-hot targets")
        return trace.output - y
    if loss == "mse_linear":
        return trace.pre[-1] - y
    raise ConfigError(f"unknown loss {loss!r}")


def activation_derivative(trace: ForwardTrace, layer: int) -> np.ndarray:
    """``da/dz`` at hidden ``layer``; for ReLU this is the switch state."""
    if trace.hidden_activation == "relu":
        return trace.switches[layer - 1].astype(np.float64)
    a = trace.act[layer - 1]
    return a * (1.0 - a)


def backprop(mlp: Mlp, trace: ForwardTrace, target) -> list[np.ndarray]:
    """Gradient of the loss w.r.t. every weight, via the backward recursion.

    For a batched trace the result is the mean over samples.
    """
    if trace.depth != mlp.config.depth or any(
        z.shape[-1] != s for z, s in zip(trace.pre, mlp.config.layer_sizes)
    ):
        raise ValueError("trace does not match the network's layer sizes")
    delta = np.atleast_2d(output_delta(trace, target, mlp.config.loss))
    n = delta.shape[0]
    grads = [None] * mlp.config.depth
    for i in range(mlp.config.depth, 0, -1):
        a_prev = np.atleast_2d(trace.activation(i - 1))
        grads[i - 1] = delta.T @ a_prev / n
        if i > 1:
            alpha = np.atleast_2d(activation_derivative(trace, i - 1))
            delta = alpha * (delta @ mlp.weights[i - 1])
    return grads


def loss_value(mlp: Mlp, features, target) -> float:
    """Mean per-sample loss (see module docstring)."""
    return loss_value_from_trace(forward(mlp, features), target)


def loss_value_from_trace(trace: ForwardTrace, target) -> float:
    y = np.asarray(target, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):  # callers check finiteness
        if trace.loss == "mse_linear":
            per = 0.5 * np.sum((trace.pre[-1] - y) ** 2, axis=-1)
        else:
            per = -np.sum(y * log_softmax(trace.pre[-1], axis=-1), axis=-1)
        return float(np.mean(per))


# ------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainSchedule:
    max_epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 1
    checkpoint_epochs: tuple[int, ...] = ()
    checkpoint_batches: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "checkpoint_epochs", tuple(self.checkpoint_epochs))
        object.__setattr__(self, "checkpoint_batches", tuple(self.checkpoint_batches))
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class OptimizerState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def optimizer_step(mlp: Mlp, grads, state: OptimizerState, schedule: TrainSchedule):
    """Apply one SGD or bias-corrected Adam update in place."""
    if len(grads) != len(mlp.weights) or any(
        g.shape != w.shape for g, w in zip(grads, mlp.weights)
    ):
        raise ValueError("gradient shapes do not match the network")
    for i, g in enumerate(grads, start=1):
        _check_finite(g, i, "gradient")
    lr = schedule.learning_rate
    if schedule.optimizer == "sgd":
        for w, g in zip(mlp.weights, grads):
            w -= lr * g
        state.step += 1
        return mlp, state
    if not state.m:
        state.m = [np.zeros_like(w) for w in mlp.weights]
        state.v = [np.zeros_like(w) for w in mlp.weights]
    state.step += 1
    b1, b2 = schedule.beta1, schedule.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for w, g, m, v in zip(mlp.weights, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + schedule.epsilon)
    return mlp, state


@dataclass(eq=False)
class Checkpoint:
    kind: str  # "epoch", "batch" or "best"
    index: int
    weights: list[np.ndarray]
    train_error: float
    val_error: float
    test_error: float

    @property
    def tag(self) -> str:
        return f"{self.kind}{self.index}"

    def network(self, config: MlpConfig) -> Mlp:
        return Mlp([w.copy() for w in self.weights], config)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_error: float
    val_error: float
    test_error: float


@dataclass(eq=False)
class TrainResult:
    best: Mlp
    best_epoch: int
    checkpoints: list[Checkpoint]
    history: list[EpochRecord]
    final: Mlp | None = None

    def __iter__(self):
        return iter((self.best, self.checkpoints, self.history))


def _errors(mlp, train, val, test):
    return tuple(evaluate(mlp, d)[1] if d is not None else float("nan")
                 for d in (train, val, test))


def _snapshot(kind, index, mlp, errs):
    return Checkpoint(kind, index, copy.deepcopy(mlp.weights), *errs)


def train(config: MlpConfig, data, schedule: TrainSchedule, log=None) -> TrainResult:
    """Mini-batch training with best-validation snapshot selection.

    ``data`` is ``(train, val, test)``; ``test`` may be ``None``.  Epoch
    checkpoints are taken after the given number of epochs (0 is the
    initialization) and batch checkpoints after the given number of updates
    within the first epoch.  The init seed and shuffling stream both derive
    from ``schedule.seed``.
    """
    train_set, val_set, test_set = data
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation splits must be non-empty")
    mlp = init_normalized_uniform(config, schedule.seed)
    order_rng = np.random.default_rng([schedule.seed, 0x5EED])
    targets = train_set.one_hot
    state = OptimizerState()

    checkpoints = []
    errs = _errors(mlp, train_set, val_set, test_set)
    if 0 in schedule.checkpoint_epochs:
        checkpoints.append(_snapshot("epoch", 0, mlp, errs))
    if 0 in schedule.checkpoint_batches:
        checkpoints.append(_snapshot("batch", 0, mlp, errs))
    best, best_epoch, best_val = mlp.copy(), 0, errs[1]
    history = []
    batch_marks = set(schedule.checkpoint_batches)

    n = len(train_set)
    for epoch in range(1, schedule.max_epochs + 1):
        order = order_rng.permutation(n)
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, schedule.batch_size), start=1):
            idx = order[start : start + schedule.batch_size]
            try:
                trace = forward(mlp, train_set.features[idx])
                batch_loss = loss_value_from_trace(trace, targets[idx])
                if not math.isfinite(batch_loss):
                    raise NumericError("non-finite loss")
                grads = backprop(mlp, trace, targets[idx])
                optimizer_step(mlp, grads, state, schedule)
            except NumericError as exc:
                raise TrainingError(
                    f"training diverged at epoch {epoch}, batch {b}: {exc}",
                    epoch=epoch, batch=b,
                ) from exc
            loss_sum += batch_loss * idx.size
            if epoch == 1 and b in batch_marks:
                checkpoints.append(
                    _snapshot("batch", b, mlp, _errors(mlp, train_set, val_set, test_set))
                )
        errs = _errors(mlp, train_set, val_set, test_set)
        history.append(EpochRecord(epoch, loss_sum / n, *errs))
        if log is not None:
            log(f"epoch {epoch}: loss {loss_sum / n:.5f} "
                f"train {errs[0]:.4f} val {errs[1]:.4f} test {errs[2]:.4f}")
        if epoch in schedule.checkpoint_epochs:
            checkpoints.append(_snapshot("epoch", epoch, mlp, errs))
        if errs[1] < best_val:
            best, best_epoch, best_val = mlp.copy(), epoch, errs[1]
    return TrainResult(best, best_epoch, checkpoints, history, mlp)


# ------------------------------------------------------------ checkpoint files


def _hex_nested(w: np.ndarray):
    return [[float(v).hex() for v in row] for row in w]


def save_checkpoint(path, checkpoint: Checkpoint, config: MlpConfig,
                    schedule: TrainSchedule | None = None) -> None:
    """Write a JSON checkpoint.

    Weights are stored twice: as decimal values for reading and as
    ``float.hex`` strings, which the loader uses so the round trip is exact.
    """
    doc = {
        "format": "coopnet-checkpoint",
        "version": 1,
        "config": asdict(config),
        "schedule": asdict(schedule) if schedule is not None else None,
        "tag": {"kind": checkpoint.kind, "index": checkpoint.index},
        "metrics": {
            "train_error": checkpoint.train_error,
            "val_error": checkpoint.val_error,
            "test_error": checkpoint.test_error,
        },
        "weights": [w.tolist() for w in checkpoint.weights],
        "weights_hex": [_hex_nested(w) for w in checkpoint.weights],
    }
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=True))


def load_checkpoint(path) -> tuple[Checkpoint, MlpConfig, TrainSchedule | None]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "coopnet-checkpoint":
        raise ValueError(f"{path} is not a checkpoint file")
    cfg = doc["config"]
    config = MlpConfig(tuple(cfg["layer_sizes"]), cfg["feature_dim"],
                       cfg["hidden_activation"], cfg["loss"])
    sched = doc.get("schedule")
    schedule = TrainSchedule(**sched) if sched else None
    weights = [
        np.array([[float.fromhex(v) for v in row] for row in w], dtype=np.float64)
        for w in doc["weights_hex"]
    ]
    check_weights(weights, config)
    m = doc["metrics"]
    ckpt = Checkpoint(doc["tag"]["kind"], doc["tag"]["index"], weights,
                      m["train_error"], m["val_error"], m["test_error"])
    return ckpt, config, schedule
