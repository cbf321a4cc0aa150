"""Training - no-BPTT backward pass, losses, gradient oracle, SGD with exponential decay."""

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .data import Dataset, iter_batches
from .errors import InvalidInputError, NumericFailure, OFNNError
from .model import (
    ChannelSpec,
    ForwardCache,
    ModelConfig,
    OscillatoryFourierNetwork,
    Params,
    forward,
)
from .reduction import block_reduce


class BackwardMode(Enum):
    """Which input-layer gradient to compute."""
    PAPER_FAITHFUL = "paper"  # same term for every channel, averaged with 1/(C*T)
    EXACT_CHAIN_RULE = "exact"  # true forward coefficients, summed over channels

    @classmethod
    def from_string(cls, value: str) -> "BackwardMode":
        for mode in cls:
            if mode.value == value.lower():
                return mode
        raise InvalidInputError(f"Unknown backward mode '{value}' (expected paper or exact)")


class LossSpec(Enum):
    SOFTMAX_CROSS_ENTROPY = "softmax_ce"
    MEAN_SQUARED_ERROR = "mse"

    @classmethod
    def from_string(cls, value: str) -> "LossSpec":
        for spec in cls:
            if spec.value == value.lower():
                return spec
        raise InvalidInputError(f"Unknown loss '{value}' (expected softmax_ce or mse)")


@dataclass
class Gradients:
    """dL/d(param) for each tensor of Params."""

    g_Wx: np.ndarray
    g_bx: np.ndarray
    g_Wy: np.ndarray
    g_by: np.ndarray

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"W_x": self.g_Wx, "b_x": self.g_bx, "W_y": self.g_Wy, "b_y": self.g_by}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(array)) for array in self.arrays().values())

    def max_relative_error(self, other: "Gradients", floor: float = 1e-8) -> Dict[str, float]:
        """Largest elementwise relative error per parameter block."""
        theirs = other.arrays()
        return {
            name: float(np.max(relative_error(mine, theirs[name], floor)))
            for name, mine in self.arrays().items()
        }


@dataclass
class OptimizerState:
    """Plain SGD with lr = lr_initial * decay_factor ** epoch."""

    lr_initial: float = 1e-3
    decay_factor: float = 0.7
    epoch: int = 0

    def __post_init__(self):
        if self.lr_initial < 0:
            raise InvalidInputError(f"lr_initial must be >= 0, got {self.lr_initial}")
        if not 0 < self.decay_factor <= 1:
            raise InvalidInputError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.epoch < 0:
            raise InvalidInputError(f"epoch must be >= 0, got {self.epoch}")

    @property
    def current_lr(self) -> float:
        return self.lr_initial * self.decay_factor ** self.epoch

    def advance_epoch(self):
        self.epoch += 1


class TrainingSettings(BaseModel):
    """The ``training.*`` section of a run config."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=32, gt=0)
    lr_initial: float = Field(default=1e-3, ge=0, allow_inf_nan=False)
    decay_factor: float = Field(default=0.7, gt=0, le=1)
    backward_mode: BackwardMode = BackwardMode.EXACT_CHAIN_RULE
    loss: LossSpec = LossSpec.SOFTMAX_CROSS_ENTROPY
    seed: int = Field(default=0, ge=0)


@dataclass
class EpochReport:
    mean_loss: float
    accuracy: float
    num_updates: int


@dataclass
class EvalReport:
    loss: float
    accuracy: float


@dataclass
class EpochRecord:
    """One row of metrics.csv."""

    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: Optional[float]
    wall_ms: float


@dataclass
class MultiSeedReport:
    mean: float
    std: float
    accuracies: List[Tuple[int, float]] = field(default_factory=list)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def _target_matrix(targets: np.ndarray, num_outputs: int, spec: LossSpec) -> np.ndarray:
    """One-hot rows for integer labels; real targets pass through (MSE only)."""
    targets = np.asarray(targets)
    if targets.ndim == 2:
        if spec is LossSpec.SOFTMAX_CROSS_ENTROPY:
            raise InvalidInputError("softmax cross-entropy needs integer class labels")
        if targets.shape[1] != num_outputs:
            raise InvalidInputError(f"target width {targets.shape[1]} != output_dim {num_outputs}")
        return targets.astype(np.float64)

    if not np.issubdtype(targets.dtype, np.integer):
        raise InvalidInputError(f"class labels must be integers, got dtype {targets.dtype}")
    if np.any(targets < 0) or np.any(targets >= num_outputs):
        raise InvalidInputError(f"label out of range [0, {num_outputs})")
    onehot = np.zeros((targets.shape[0], num_outputs))
    onehot[np.arange(targets.shape[0]), targets] = 1.0
    return onehot


def batch_loss_and_grad(
    logits: np.ndarray,
    targets: np.ndarray,
    spec: LossSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample losses (B,) and dL/dy (B, d) for a batch of logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericFailure("non-finite logits passed to the loss")
    if len(targets) != logits.shape[0]:
        raise InvalidInputError(f"{len(targets)} targets for {logits.shape[0]} logit rows")
    onehot = _target_matrix(targets, logits.shape[1], spec)

    if spec is LossSpec.SOFTMAX_CROSS_ENTROPY:
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        losses = -(log_probs * onehot).sum(axis=1)
        return losses, np.exp(log_probs) - onehot

    diff = logits - onehot
    width = logits.shape[1]
    return (diff ** 2).sum(axis=1) / width, 2.0 * diff / width


def loss_and_output_grad(
    logits: np.ndarray,
    target: Union[int, np.ndarray],
    spec: LossSpec
) -> Tuple[float, np.ndarray]:
    """Loss and dL/dy for one logits vector of shape (d,)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise InvalidInputError(f"expected a logits vector, got shape {logits.shape}")
    target = np.asarray(target)
    if target.ndim == 0:
        targets = target[None]
    elif target.ndim == 1 and spec is LossSpec.MEAN_SQUARED_ERROR:
        targets = target[None, :]
    else:
        raise InvalidInputError(f"target must be a class label or (for mse) a vector, got shape {target.shape}")
    losses, grads = batch_loss_and_grad(logits[None], targets, spec)
    return float(losses[0]), grads[0]


def _channel_weights(mode: BackwardMode, channels: ChannelSpec) -> np.ndarray:
    if mode is BackwardMode.EXACT_CHAIN_RULE:
        return channels.coefficients
    return np.full(channels.num_channels, 1.0 / (channels.num_channels * channels.num_steps))


def _check_backward_inputs(cache: ForwardCache, dL_dy: np.ndarray, params: Params, channels: ChannelSpec):
    batch, steps, hidden = cache.phis.shape
    if hidden != params.W_x.shape[0] or cache.inputs.shape[2] != params.W_x.shape[1]:
        raise InvalidInputError("cache was produced by a model with a different input layer")
    if cache.h_cat.shape[1] != params.W_y.shape[1] or cache.h_cat.shape[1] != channels.num_channels * hidden:
        raise InvalidInputError("cache hidden width does not match W_y / channel count")
    if steps != channels.num_steps:
        raise InvalidInputError(f"cache has {steps} timesteps, channel spec expects {channels.num_steps}")
    if dL_dy.shape != (batch, params.W_y.shape[0]):
        raise InvalidInputError(f"dL/dy has shape {dL_dy.shape}, expected {(batch, params.W_y.shape[0])}")


def _hidden_grads(dL_dy: np.ndarray, params: Params, num_channels: int) -> np.ndarray:
    """[W_y[i]]^T dL/dy for every channel block i, shape (B, C, n)."""
    blocks = params.W_y.reshape(params.W_y.shape[0], num_channels, -1)
    return np.einsum("bd,dcn->bcn", dL_dy, blocks)


def _as_batch_grad(dL_dy: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(dL_dy, dtype=np.float64))


def phase_gradients(
    cache: ForwardCache,
    dL_dy: np.ndarray,
    params: Params,
    channels: ChannelSpec,
    mode: BackwardMode = BackwardMode.EXACT_CHAIN_RULE
) -> np.ndarray:
    """
    Per-timestep dL/dphi<t>, shape (B, T, n): sum over channels of
    weight_i * (-sin theta_i<t>) .* ([W_y[i]]^T dL/dy). No term depends on another timestep.
    """
    dL_dy = _as_batch_grad(dL_dy)
    _check_backward_inputs(cache, dL_dy, params, channels)
    weighted = _hidden_grads(dL_dy, params, channels.num_channels) * _channel_weights(mode, channels)[:, None]
    offsets = channels.phase_offsets(cache.steps)
    theta = cache.phis[:, :, None, :] - offsets[None, :, :, None]
    return -np.einsum("btcn,bcn->btn", np.sin(theta), weighted)


def backward(
    cache: ForwardCache,
    dL_dy: np.ndarray,
    params: Params,
    channels: ChannelSpec,
    config: ModelConfig,
    mode: BackwardMode = BackwardMode.EXACT_CHAIN_RULE,
    workers: int = 1
) -> Gradients:
    """
    Gradients of the loss, averaged over the batch.

    Args:
        cache: From forward/forward_batch on the same params
        dL_dy: Shape (d,) or (B, d)
        params: Parameters used for the forward call
        channels: Channel spec used for the forward call
        config: Architecture (shape check)
        mode: PAPER_FAITHFUL or EXACT_CHAIN_RULE
        workers: Threads for the timestep reduction

    Returns:
        Gradients with the same shapes as Params
    """
    params.check(config)
    dL_dy = _as_batch_grad(dL_dy)
    _check_backward_inputs(cache, dL_dy, params, channels)
    batch = dL_dy.shape[0]

    g_by = dL_dy.mean(axis=0)
    g_Wy = dL_dy.T @ cache.h_cat / batch

    weighted = _hidden_grads(dL_dy, params, channels.num_channels) * _channel_weights(mode, channels)[:, None]
    offsets = channels.phase_offsets(cache.steps)

    def block(start: int, stop: int):
        theta = cache.phis[:, start:stop, None, :] - offsets[None, start:stop, :, None]
        d_phi = -np.einsum("btcn,bcn->btn", np.sin(theta), weighted)
        d_wx = np.tensordot(d_phi, cache.inputs[:, start:stop, :], axes=([0, 1], [0, 1]))
        return d_phi.sum(axis=(0, 1)), d_wx

    g_bx, g_Wx = block_reduce(block, cache.phis.shape[1], workers)
    grads = Gradients(g_Wx=g_Wx / batch, g_bx=g_bx / batch, g_Wy=g_Wy, g_by=g_by)
    if not grads.is_finite():
        raise NumericFailure("non-finite gradients in the backward pass")
    return grads


def channel_input_grads(
    cache: ForwardCache,
    dL_dy: np.ndarray,
    params: Params,
    channels: ChannelSpec,
    mode: BackwardMode
) -> np.ndarray:
    """Each channel's contribution to dL/dW_x, shape (C, n, m_eff), batch-averaged."""
    dL_dy = _as_batch_grad(dL_dy)
    _check_backward_inputs(cache, dL_dy, params, channels)
    weighted = _hidden_grads(dL_dy, params, channels.num_channels) * _channel_weights(mode, channels)[:, None]
    offsets = channels.phase_offsets(cache.steps)
    theta = cache.phis[:, :, None, :] - offsets[None, :, :, None]
    per_channel = -np.sin(theta) * weighted[:, None, :, :]
    return np.einsum("btcn,btm->cnm", per_channel, cache.inputs) / dL_dy.shape[0]


def mode_scale_ratios(
    cache: ForwardCache,
    dL_dy: np.ndarray,
    params: Params,
    channels: ChannelSpec
) -> np.ndarray:
    """Per channel <exact, uniform> / <uniform, uniform>; sqrt(2)*C for DC, C for AC. NaN if a channel's gradient vanishes."""
    exact = channel_input_grads(cache, dL_dy, params, channels, BackwardMode.EXACT_CHAIN_RULE)
    uniform = channel_input_grads(cache, dL_dy, params, channels, BackwardMode.PAPER_FAITHFUL)
    ratios = np.full(channels.num_channels, np.nan)
    for c in range(channels.num_channels):
        norm = float(np.sum(uniform[c] * uniform[c]))
        if norm > 0:
            ratios[c] = float(np.sum(exact[c] * uniform[c])) / norm
    return ratios


def finite_diff_gradients(
    params: Params,
    channels: ChannelSpec,
    sequence: np.ndarray,
    target: Union[int, np.ndarray],
    config: ModelConfig,
    spec: LossSpec,
    step: float = 1e-6
) -> Gradients:
    """Central differences (L(p+eps) - L(p-eps)) / 2eps through the full forward + loss."""
    if not step > 0:
        raise InvalidInputError(f"finite-difference step must be positive, got {step}")

    def loss_at(probe: Params) -> float:
        logits, _ = forward(probe, channels, sequence, config)
        loss, _ = loss_and_output_grad(logits, target, spec)
        if not np.isfinite(loss):
            raise NumericFailure("non-finite loss during finite differencing")
        return loss

    work = params.copy()
    result = {}
    for name, array in work.arrays().items():
        grad = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + step
            upper = loss_at(work)
            array[index] = original - step
            lower = loss_at(work)
            array[index] = original
            grad[index] = (upper - lower) / (2.0 * step)
        result[name] = grad
    return Gradients(g_Wx=result["W_x"], g_bx=result["b_x"], g_Wy=result["W_y"], g_by=result["b_y"])


def apply_update(params: Params, grads: Gradients, opt: OptimizerState) -> Params:
    """One descent step, params - lr * grads. Returns new Params."""
    if not grads.is_finite():
        raise NumericFailure("refusing to apply non-finite gradients")
    lr = opt.current_lr
    return Params(
        W_x=params.W_x - lr * grads.g_Wx,
        b_x=params.b_x - lr * grads.g_bx,
        W_y=params.W_y - lr * grads.g_Wy,
        b_y=params.b_y - lr * grads.g_by,
    )


def train_epoch(
    model: OscillatoryFourierNetwork,
    dataset: Dataset,
    opt: OptimizerState,
    mode: BackwardMode = BackwardMode.EXACT_CHAIN_RULE,
    spec: LossSpec = LossSpec.SOFTMAX_CROSS_ENTROPY,
    batch_size: int = 32,
    shuffle_seed: Union[int, Sequence[int]] = 0
) -> EpochReport:
    """
    One pass over ``dataset`` in shuffled mini-batches; updates ``model.params``.
    Loss and accuracy are measured on each batch before its update.
    """
    if len(dataset) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    if batch_size <= 0:
        raise InvalidInputError(f"batch_size must be positive, got {batch_size}")

    rng = np.random.default_rng(shuffle_seed)
    total_loss = 0.0
    correct = 0
    updates = 0
    for batch_index, indices in enumerate(iter_batches(len(dataset), batch_size, rng)):
        sequences = dataset.sequences[indices]
        labels = dataset.labels[indices]
        try:
            logits, cache = model.forward(sequences)
            losses, dL_dy = batch_loss_and_grad(logits, labels, spec)
            grads = backward(cache, dL_dy, model.params, model.channels, model.config, mode, model.workers)
            model.params = apply_update(model.params, grads, opt)
        except NumericFailure as exc:
            raise NumericFailure(f"batch {batch_index}: {exc}") from exc

        total_loss += float(losses.sum())
        correct += int(np.sum(np.argmax(logits, axis=1) == labels))
        updates += 1

    return EpochReport(mean_loss=total_loss / len(dataset), accuracy=correct / len(dataset), num_updates=updates)


def evaluate(
    model: OscillatoryFourierNetwork,
    dataset: Dataset,
    spec: LossSpec = LossSpec.SOFTMAX_CROSS_ENTROPY,
    batch_size: int = 256
) -> EvalReport:
    """Mean loss and accuracy; does not touch the parameters."""
    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    logits = model.logits(dataset.sequences, batch_size)
    losses, _ = batch_loss_and_grad(logits, dataset.labels, spec)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == dataset.labels))
    return EvalReport(loss=float(losses.mean()), accuracy=accuracy)


def fit(
    model: OscillatoryFourierNetwork,
    train: Dataset,
    test: Optional[Dataset],
    settings: TrainingSettings,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    wall_clock: bool = True
) -> List[EpochRecord]:
    """
    Epoch loop with exponential LR decay. Epoch k (1-based) trains at
    lr_initial * decay_factor ** (k - 1); shuffling is seeded by (seed, k).
    """
    opt = OptimizerState(settings.lr_initial, settings.decay_factor)
    records: List[EpochRecord] = []
    for epoch in range(1, settings.epochs + 1):
        lr = opt.current_lr
        started = time.perf_counter()
        report = train_epoch(
            model,
            train,
            opt,
            settings.backward_mode,
            settings.loss,
            settings.batch_size,
            shuffle_seed=(settings.seed, epoch),
        )
        test_acc = evaluate(model, test, settings.loss).accuracy if test is not None else None
        elapsed_ms = (time.perf_counter() - started) * 1000.0 if wall_clock else 0.0

        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            train_loss=report.mean_loss,
            train_acc=report.accuracy,
            test_acc=test_acc,
            wall_ms=elapsed_ms,
        )
        records.append(record)
        if on_epoch:
            on_epoch(record)
        opt.advance_epoch()
    return records


def multi_seed_eval(
    config: ModelConfig,
    train: Dataset,
    test: Dataset,
    seeds: Sequence[int],
    settings: TrainingSettings,
    workers: int = 1
) -> MultiSeedReport:
    """Retrain from scratch per seed and report mean and sample std of test accuracy."""
    if len(seeds) < 2:
        raise InvalidInputError(f"multi-seed evaluation needs at least 2 seeds, got {len(seeds)}")

    accuracies: List[Tuple[int, float]] = []
    for seed in seeds:
        seeded = settings.model_copy(update={"seed": seed})
        model = OscillatoryFourierNetwork(config, seed=seed, workers=workers)
        try:
            fit(model, train, test, seeded, wall_clock=False)
            accuracies.append((seed, evaluate(model, test, seeded.loss).accuracy))
        except OFNNError as exc:
            raise type(exc)(f"seed {seed}: {exc}") from exc

    values = np.array([accuracy for _, accuracy in accuracies])
    return MultiSeedReport(mean=float(values.mean()), std=float(values.std(ddof=1)), accuracies=accuracies)
