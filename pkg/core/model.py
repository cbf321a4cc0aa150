"""O-FNN model - channel frequencies, input layer, TV-Cosine accumulation and readout."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InvalidInputError, NumericFailure
from .reduction import block_reduce

DC_PHASE = math.pi / 4
SQRT2 = math.sqrt(2.0)

PARAM_NAMES = ("W_x", "b_x", "W_y", "b_y")


class InputMode(Enum):
    """How input vectors are presented to the TV-Cosine neurons at each timestep."""
    FULLY_CONNECTED = "fc"
    CONV1D = "conv1d"

    @classmethod
    def from_string(cls, value: str) -> "InputMode":
        for mode in cls:
            if mode.value == value.lower():
                return mode
        raise InvalidInputError(f"Unknown input mode '{value}' (expected one of: fc, conv1d)")


class Activation(Enum):
    """Activations for the generic-activation DFT baseline."""
    RELU = "relu"
    SIGMOID = "sigmoid"

    def apply(self, values: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(values, 0.0)
        # exp(-log(1 + e^-x)) stays finite for large |x|
        return np.exp(-np.logaddexp(0.0, -values))


class ModelConfig(BaseModel):
    """Architecture hyperparameters. Conv fields are ignored in FC mode."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_dim: int = Field(gt=0)
    hidden_dim: int = Field(gt=0)
    num_channels: int = Field(ge=1)
    base_freq: float = Field(gt=0, allow_inf_nan=False)
    seq_len: int = Field(gt=0)
    output_dim: int = Field(gt=0)
    input_mode: InputMode = InputMode.FULLY_CONNECTED
    conv_window: int = Field(default=3, ge=1)
    conv_stride: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _window_fits_sequence(self) -> "ModelConfig":
        if self.input_mode is InputMode.CONV1D and self.conv_window > self.seq_len:
            raise ValueError(
                f"conv_window ({self.conv_window}) exceeds seq_len ({self.seq_len})"
            )
        return self

    @property
    def num_steps(self) -> int:
        """Effective timesteps after the input layer (no padding in conv mode)."""
        if self.input_mode is InputMode.CONV1D:
            return (self.seq_len - self.conv_window) // self.conv_stride + 1
        return self.seq_len

    @property
    def effective_input_dim(self) -> int:
        if self.input_mode is InputMode.CONV1D:
            return self.conv_window * self.input_dim
        return self.input_dim


@dataclass(frozen=True)
class ChannelSpec:
    """Angular velocity per channel. ``omegas[0]`` is a 0 sentinel for the DC channel."""

    omegas: np.ndarray
    num_steps: int

    @property
    def num_channels(self) -> int:
        return int(self.omegas.shape[0])

    @property
    def coefficients(self) -> np.ndarray:
        """Final scaling of each channel's running sum: sqrt(2)/T for DC, 1/T for AC."""
        coef = np.full(self.num_channels, 1.0 / self.num_steps)
        coef[0] = SQRT2 / self.num_steps
        return coef

    def phase_offsets(self, steps: np.ndarray) -> np.ndarray:
        """Phase subtracted from phi at each labelled step: pi/4 (DC) or omega_i * t (AC). Shape (len(steps), C)."""
        offsets = np.outer(np.asarray(steps, dtype=np.float64), self.omegas)
        offsets[:, 0] = DC_PHASE
        return offsets


@dataclass
class Params:
    """Trainable tensors of one O-FNN."""

    W_x: np.ndarray
    b_x: np.ndarray
    W_y: np.ndarray
    b_y: np.ndarray

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"W_x": self.W_x, "b_x": self.b_x, "W_y": self.W_y, "b_y": self.b_y}

    def copy(self) -> "Params":
        return Params(self.W_x.copy(), self.b_x.copy(), self.W_y.copy(), self.b_y.copy())

    def check(self, config: ModelConfig):
        """Raise InvalidInputError unless shapes match ``config`` and every entry is finite."""
        expected = param_shapes(config)
        for name, array in self.arrays().items():
            if array.shape != expected[name]:
                raise InvalidInputError(
                    f"{name} has shape {array.shape}, config expects {expected[name]}"
                )
            if not np.all(np.isfinite(array)):
                raise InvalidInputError(f"{name} contains non-finite entries")


@dataclass
class ForwardCache:
    """
    What the backward pass needs from a forward call. Every array carries a
    leading batch axis; ``forward`` produces a batch of one.

    theta is never stored: it is rebuilt as phis - channels.phase_offsets(steps).
    """

    phis: np.ndarray       # (B, T, n)
    h_final: np.ndarray    # (B, C, n)
    h_cat: np.ndarray      # (B, C*n), channel 0 first
    inputs: np.ndarray     # (B, T, m_eff)
    steps: np.ndarray      # (T,), 1-based


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    n = config.hidden_dim
    width = config.num_channels * n
    return {
        "W_x": (n, config.effective_input_dim),
        "b_x": (n,),
        "W_y": (config.output_dim, width),
        "b_y": (config.output_dim,),
    }


def param_count(config: ModelConfig) -> int:
    """m_eff*n + n + d*C*n + d."""
    return sum(int(np.prod(shape)) for shape in param_shapes(config).values())


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    """Weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config)
    x_bound = 1.0 / math.sqrt(shapes["W_x"][1])
    y_bound = 1.0 / math.sqrt(shapes["W_y"][1])
    return Params(
        W_x=rng.uniform(-x_bound, x_bound, size=shapes["W_x"]),
        b_x=np.zeros(shapes["b_x"]),
        W_y=rng.uniform(-y_bound, y_bound, size=shapes["W_y"]),
        b_y=np.zeros(shapes["b_y"]),
    )


def make_channels(config: ModelConfig) -> ChannelSpec:
    """omega_i = 2^i * pi * f / T for i >= 1, with T the effective step count."""
    steps = config.num_steps
    exponents = np.arange(config.num_channels, dtype=np.float64)
    omegas = np.power(2.0, exponents) * math.pi * config.base_freq / steps
    omegas[0] = 0.0
    return ChannelSpec(omegas=omegas, num_steps=steps)


def _check_channels(channels: ChannelSpec, config: ModelConfig):
    if channels.num_channels != config.num_channels or channels.num_steps != config.num_steps:
        raise InvalidInputError(
            f"channel spec ({channels.num_channels} channels, {channels.num_steps} steps) "
            f"does not match config ({config.num_channels} channels, {config.num_steps} steps)"
        )


def _effective_batch(sequences: np.ndarray, config: ModelConfig) -> np.ndarray:
    """(B, N, m) -> (B, T, m_eff)."""
    sequences = np.asarray(sequences, dtype=np.float64)
    if sequences.ndim != 3:
        raise InvalidInputError(f"expected a (batch, seq_len, input_dim) array, got shape {sequences.shape}")
    length, width = sequences.shape[1], sequences.shape[2]
    if config.input_mode is InputMode.CONV1D and length < config.conv_window:
        raise InvalidInputError(
            f"sequence of length {length} is shorter than the conv window ({config.conv_window})"
        )
    if length != config.seq_len or width != config.input_dim:
        raise InvalidInputError(
            f"sequence shape ({length}, {width}) does not match config ({config.seq_len}, {config.input_dim})"
        )
    if config.input_mode is InputMode.FULLY_CONNECTED:
        return sequences

    # windows: (B, N-w+1, m, w) -> rows t..t+w-1 concatenated in time order
    windows = np.lib.stride_tricks.sliding_window_view(sequences, config.conv_window, axis=1)
    windows = np.swapaxes(windows, -1, -2)[:, ::config.conv_stride]
    return np.ascontiguousarray(windows).reshape(sequences.shape[0], -1, config.effective_input_dim)


def effective_inputs(sequence: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Input vector presented at each effective timestep, shape (T, m_eff)."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2:
        raise InvalidInputError(f"expected a (seq_len, input_dim) array, got shape {sequence.shape}")
    return _effective_batch(sequence[None], config)[0]


def input_phase(params: Params, x_eff: np.ndarray) -> np.ndarray:
    """phi = W_x x + b_x for one timestep."""
    x_eff = np.asarray(x_eff, dtype=np.float64)
    if x_eff.ndim != 1 or x_eff.shape[0] != params.W_x.shape[1]:
        raise InvalidInputError(
            f"input of shape {x_eff.shape} does not match W_x of shape {params.W_x.shape}"
        )
    return params.W_x @ x_eff + params.b_x


def _phases(params: Params, inputs: np.ndarray) -> np.ndarray:
    phis = inputs @ params.W_x.T + params.b_x
    bad = ~np.isfinite(phis)
    if bad.any():
        step = int(np.argwhere(bad)[0][1]) + 1
        raise NumericFailure(f"non-finite input phase at timestep {step}")
    return phis


def accumulate_channels(
    phis: np.ndarray,
    steps: np.ndarray,
    channels: ChannelSpec,
    workers: int = 1
) -> np.ndarray:
    """
    Normalized TV-Cosine channel states: coef_i * sum_t cos(phi<t> - offset_i(t)).

    ``steps`` labels each row of ``phis`` with its 1-based timestep, so rows may be
    passed in any order. Accepts (T, n) or (B, T, n); returns (C, n) or (B, C, n).
    """
    single = phis.ndim == 2
    batch = phis[None] if single else phis
    steps = np.asarray(steps, dtype=np.float64)

    def block(start: int, stop: int):
        offsets = channels.phase_offsets(steps[start:stop])
        theta = batch[:, start:stop, None, :] - offsets[None, :, :, None]
        return (np.cos(theta).sum(axis=1),)

    (total,) = block_reduce(block, batch.shape[1], workers)
    hidden = total * channels.coefficients[:, None]
    return hidden[0] if single else hidden


def accumulate_channels_sequential(phis: np.ndarray, steps: np.ndarray, channels: ChannelSpec) -> np.ndarray:
    """Reference path: one running sum per channel, one timestep at a time."""
    single = phis.ndim == 2
    batch = phis[None] if single else phis
    offsets = channels.phase_offsets(steps)
    hidden = np.zeros((batch.shape[0], channels.num_channels, batch.shape[2]))
    for t in range(batch.shape[1]):
        hidden += np.cos(batch[:, t, None, :] - offsets[t][None, :, None])
    hidden *= channels.coefficients[:, None]
    return hidden[0] if single else hidden


def forward_batch(
    params: Params,
    channels: ChannelSpec,
    sequences: np.ndarray,
    config: ModelConfig,
    workers: int = 1,
    sequential: bool = False
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Forward pass over a batch of sequences.

    Args:
        params: Trainable tensors
        channels: Output of make_channels(config)
        sequences: Array of shape (B, N, m)
        config: Architecture
        workers: Threads for the timestep reduction
        sequential: Use the per-timestep running-sum path instead of the blocked reduction

    Returns:
        (logits of shape (B, d), cache for backward)
    """
    _check_channels(channels, config)
    params.check(config)
    inputs = _effective_batch(sequences, config)
    phis = _phases(params, inputs)
    steps = np.arange(1, config.num_steps + 1, dtype=np.float64)

    if sequential:
        hidden = accumulate_channels_sequential(phis, steps, channels)
    else:
        hidden = accumulate_channels(phis, steps, channels, workers)

    h_cat = hidden.reshape(hidden.shape[0], -1)
    logits = h_cat @ params.W_y.T + params.b_y
    if not np.all(np.isfinite(logits)):
        raise NumericFailure("non-finite logits at the readout layer")
    return logits, ForwardCache(phis=phis, h_final=hidden, h_cat=h_cat, inputs=inputs, steps=steps)


def forward(
    params: Params,
    channels: ChannelSpec,
    sequence: np.ndarray,
    config: ModelConfig,
    workers: int = 1
) -> Tuple[np.ndarray, ForwardCache]:
    """Forward pass for one (N, m) sequence; logits have shape (d,)."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2:
        raise InvalidInputError(f"expected a (seq_len, input_dim) array, got shape {sequence.shape}")
    logits, cache = forward_batch(params, channels, sequence[None], config, workers)
    return logits[0], cache


def forward_dft_form(
    params: Params,
    channels: ChannelSpec,
    sequence: np.ndarray,
    config: ModelConfig
) -> np.ndarray:
    """
    Hidden states from explicit sine/cosine projections, shape (C, n).

    h_0 = (1/T) sum(sin phi + cos phi); h_i = (1/T) sum(sin phi sin w_i t + cos phi cos w_i t).
    Cross-check for ``forward``; not used for training.
    """
    _check_channels(channels, config)
    params.check(config)
    phis = _phases(params, effective_inputs(sequence, config)[None])[0]
    steps = np.arange(1, config.num_steps + 1, dtype=np.float64)

    angles = np.outer(steps, channels.omegas)
    sin_basis = np.sin(angles)
    cos_basis = np.cos(angles)
    sin_basis[:, 0] = 1.0
    cos_basis[:, 0] = 1.0

    projected = np.sin(phis).T @ sin_basis + np.cos(phis).T @ cos_basis
    return projected.T / config.num_steps


def baseline_dft_activation(
    activation: Activation,
    params: Params,
    channels: ChannelSpec,
    sequence: np.ndarray,
    config: ModelConfig,
    split_form: bool = False
) -> np.ndarray:
    """
    DFT of a generic activation f(phi): (sqrt(2)/T) sum_t f(phi<t>) cos(w_i t - pi/4), shape (C, n).

    ``split_form`` evaluates the same sum as (1/T) sum_t f(phi)(sin w_i t + cos w_i t).
    Needs one multiply per neuron, channel and step; used by the bench as the cost baseline.
    """
    _check_channels(channels, config)
    params.check(config)
    phis = _phases(params, effective_inputs(sequence, config)[None])[0]
    activated = activation.apply(phis)
    steps = np.arange(1, config.num_steps + 1, dtype=np.float64)

    angles = np.outer(steps, channels.omegas)
    if split_form:
        basis = (np.sin(angles) + np.cos(angles)) / config.num_steps
    else:
        basis = SQRT2 * np.cos(angles - DC_PHASE) / config.num_steps
    return basis.T @ activated


class OscillatoryFourierNetwork:
    """
    One O-FNN: config, channel frequencies and parameters.
    Training replaces ``params`` between batches; everything else is read-only.
    """

    def __init__(
        self,
        config: ModelConfig,
        params: Optional[Params] = None,
        seed: int = 0,
        workers: int = 1
    ):
        self.config = config
        self.channels = make_channels(config)
        self.params = params if params is not None else init_params(config, seed)
        self.params.check(config)
        self.workers = workers

    def forward(self, sequences: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        return forward_batch(self.params, self.channels, sequences, self.config, self.workers)

    def logits(self, sequences: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Logits for many sequences, evaluated in chunks without keeping caches."""
        chunks = []
        for start in range(0, len(sequences), batch_size):
            chunk_logits, _ = self.forward(sequences[start:start + batch_size])
            chunks.append(chunk_logits)
        return np.concatenate(chunks, axis=0)

    def predict(self, sequences: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(sequences), axis=1)
