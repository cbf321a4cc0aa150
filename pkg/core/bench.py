"""
Operation counts and timing for the O-FNN forward pass and the
generic-activation DFT baseline.

Counting conventions:
- A shifted cosine cos(phi - offset) is one trig evaluation. Offsets (pi/4
  or omega_i * t) and the baseline's sinusoid basis are precomputed tables.
- Baseline activations f(phi) are not counted.
- The per-channel output scaling (sqrt(2)/T or 1/T) is applied once after
  the timestep loop and is counted under the readout phase.
"""

import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Union

import numpy as np

from .errors import InvalidInputError
from .model import (
    DC_PHASE,
    SQRT2,
    Activation,
    ModelConfig,
    Params,
    baseline_dft_activation,
    effective_inputs,
    forward_batch,
    init_params,
    make_channels,
)

MIN_REPEATS = 5


class Phase(Enum):
    INPUT_LAYER = "input_layer"
    HIDDEN_ACCUMULATION = "hidden_accumulation"
    READOUT = "readout"


@dataclass
class OpCount:
    phase: Phase
    multiplies: int = 0
    adds: int = 0
    trig_evals: int = 0

    def __post_init__(self):
        if min(self.multiplies, self.adds, self.trig_evals) < 0:
            raise InvalidInputError("operation counts cannot be negative")

    def as_tuple(self):
        return self.multiplies, self.adds, self.trig_evals


OpCounts = Dict[Phase, OpCount]


class OpCounter:
    """
    Scalar arithmetic that counts itself.

    Every operation is attributed to the phase set by the innermost
    ``in_phase`` block.
    """

    def __init__(self):
        self.counts: OpCounts = {phase: OpCount(phase) for phase in Phase}
        self._phase: Optional[Phase] = None

    @contextmanager
    def in_phase(self, phase: Phase):
        previous = self._phase
        self._phase = phase
        try:
            yield self
        finally:
            self._phase = previous

    def _current(self) -> OpCount:
        if self._phase is None:
            raise RuntimeError("arithmetic outside of an in_phase block")
        return self.counts[self._phase]

    def mul(self, a: float, b: float) -> float:
        self._current().multiplies += 1
        return a * b

    def add(self, a: float, b: float) -> float:
        self._current().adds += 1
        return a + b

    def cos_shifted(self, phi: float, offset: float) -> float:
        self._current().trig_evals += 1
        return float(np.cos(phi - offset))


@dataclass
class OpTrace:
    """Counts from an instrumented run plus what it computed."""

    counts: OpCounts
    hidden: np.ndarray  # (C, n)
    logits: np.ndarray  # (d,)
    params: Params
    sequence: np.ndarray  # (N, m)


@dataclass
class TimingResult:
    median_ms: float
    p90_ms: float
    samples_ms: List[float] = field(default_factory=list)
    hidden: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None


def _input_layer_ops(config: ModelConfig) -> OpCount:
    # m_eff products and m_eff additions (bias included) per neuron and step
    work = config.hidden_dim * config.effective_input_dim * config.num_steps
    return OpCount(Phase.INPUT_LAYER, multiplies=work, adds=work)


def _readout_ops(config: ModelConfig) -> OpCount:
    width = config.num_channels * config.hidden_dim
    return OpCount(
        Phase.READOUT,
        multiplies=width + config.output_dim * width,
        adds=config.output_dim * width,
    )


def count_forward_ops(config: ModelConfig) -> OpCounts:
    """Closed-form per-phase counts for one O-FNN forward pass."""
    cells = config.num_channels * config.hidden_dim * config.num_steps
    return {
        Phase.INPUT_LAYER: _input_layer_ops(config),
        Phase.HIDDEN_ACCUMULATION: OpCount(Phase.HIDDEN_ACCUMULATION, multiplies=0, adds=cells, trig_evals=cells),
        Phase.READOUT: _readout_ops(config),
    }


def count_baseline_ops(config: ModelConfig) -> OpCounts:
    """Closed-form per-phase counts for the activation-then-DFT baseline."""
    cells = config.num_channels * config.hidden_dim * config.num_steps
    return {
        Phase.INPUT_LAYER: _input_layer_ops(config),
        Phase.HIDDEN_ACCUMULATION: OpCount(Phase.HIDDEN_ACCUMULATION, multiplies=cells, adds=cells, trig_evals=0),
        Phase.READOUT: _readout_ops(config),
    }


def _traced_input_layer(counter: OpCounter, W_x, b_x, x_eff) -> np.ndarray:
    steps, width = x_eff.shape
    n = W_x.shape[0]
    phis = np.empty((steps, n))
    with counter.in_phase(Phase.INPUT_LAYER):
        for t in range(steps):
            for j in range(n):
                acc = float(b_x[j])
                for k in range(width):
                    acc = counter.add(acc, counter.mul(float(W_x[j, k]), float(x_eff[t, k])))
                phis[t, j] = acc
    return phis


def _traced_readout(counter: OpCounter, sums: np.ndarray, coefficients: np.ndarray, W_y, b_y):
    num_channels, n = sums.shape
    hidden = np.empty_like(sums)
    logits = np.empty(W_y.shape[0])
    with counter.in_phase(Phase.READOUT):
        for c in range(num_channels):
            for j in range(n):
                hidden[c, j] = counter.mul(float(coefficients[c]), float(sums[c, j]))
        flat = hidden.reshape(-1)
        for o in range(W_y.shape[0]):
            acc = float(b_y[o])
            for i in range(flat.shape[0]):
                acc = counter.add(acc, counter.mul(float(W_y[o, i]), float(flat[i])))
            logits[o] = acc
    return hidden, logits


def _trace_setup(config: ModelConfig, seed: int):
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    # non-zero biases so the input layer is exercised fully
    params.b_x = rng.uniform(-1.0, 1.0, size=params.b_x.shape)
    params.b_y = rng.uniform(-1.0, 1.0, size=params.b_y.shape)
    sequence = rng.uniform(-1.0, 1.0, size=(config.seq_len, config.input_dim))
    return params, sequence


def trace_forward_ops(config: ModelConfig, seed: int = 0) -> OpTrace:
    """Run one O-FNN forward pass in counted scalar arithmetic."""
    params, sequence = _trace_setup(config, seed)
    channels = make_channels(config)
    counter = OpCounter()

    phis = _traced_input_layer(counter, params.W_x, params.b_x, effective_inputs(sequence, config))
    steps = np.arange(1, config.num_steps + 1, dtype=np.float64)
    offsets = channels.phase_offsets(steps)

    sums = np.zeros((channels.num_channels, config.hidden_dim))
    with counter.in_phase(Phase.HIDDEN_ACCUMULATION):
        for c in range(channels.num_channels):
            for j in range(config.hidden_dim):
                acc = 0.0
                for t in range(config.num_steps):
                    acc = counter.add(acc, counter.cos_shifted(float(phis[t, j]), float(offsets[t, c])))
                sums[c, j] = acc

    hidden, logits = _traced_readout(counter, sums, channels.coefficients, params.W_y, params.b_y)
    return OpTrace(counts=counter.counts, hidden=hidden, logits=logits, params=params, sequence=sequence)


def trace_baseline_ops(
    config: ModelConfig,
    seed: int = 0,
    activation: Activation = Activation.RELU
) -> OpTrace:
    """Run one baseline forward pass in counted scalar arithmetic."""
    params, sequence = _trace_setup(config, seed)
    channels = make_channels(config)
    counter = OpCounter()

    phis = _traced_input_layer(counter, params.W_x, params.b_x, effective_inputs(sequence, config))
    activated = activation.apply(phis)
    steps = np.arange(1, config.num_steps + 1, dtype=np.float64)
    basis = SQRT2 * np.cos(np.outer(steps, channels.omegas) - DC_PHASE)

    sums = np.zeros((channels.num_channels, config.hidden_dim))
    with counter.in_phase(Phase.HIDDEN_ACCUMULATION):
        for c in range(channels.num_channels):
            for j in range(config.hidden_dim):
                acc = 0.0
                for t in range(config.num_steps):
                    acc = counter.add(acc, counter.mul(float(activated[t, j]), float(basis[t, c])))
                sums[c, j] = acc

    coefficients = np.full(channels.num_channels, 1.0 / config.num_steps)
    hidden, logits = _traced_readout(counter, sums, coefficients, params.W_y, params.b_y)
    return OpTrace(counts=counter.counts, hidden=hidden, logits=logits, params=params, sequence=sequence)


def multiply_reduction(ofnn: OpCounts, baseline: OpCounts, phase: Phase = Phase.HIDDEN_ACCUMULATION) -> Union[str, float]:
    """Baseline/O-FNN multiply ratio for one phase; "eliminated" when O-FNN needs none."""
    ours = ofnn[phase].multiplies
    theirs = baseline[phase].multiplies
    if ours == 0:
        return "eliminated" if theirs > 0 else 1.0
    return theirs / ours


def _time_calls(fn, repeats: int) -> List[float]:
    if repeats < MIN_REPEATS:
        raise InvalidInputError(f"repeats must be at least {MIN_REPEATS}, got {repeats}")
    fn()  # warm-up
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    return samples


def _summarize(samples: List[float]) -> TimingResult:
    return TimingResult(
        median_ms=statistics.median(samples),
        p90_ms=float(np.percentile(samples, 90)),
        samples_ms=samples,
    )


def time_forward(
    config: ModelConfig,
    batch: int,
    parallel: bool,
    repeats: int = 7,
    workers: int = 1,
    seed: int = 0
) -> TimingResult:
    """
    Time the O-FNN forward pass on a seeded random batch.

    Args:
        config: Architecture
        batch: Sequences per call
        parallel: Blocked reduction on ``workers`` threads; False runs the
            single-worker per-timestep running sum
        repeats: Timed calls after one warm-up call
        workers: Threads for the parallel path
        seed: Seed for parameters and inputs

    Returns:
        TimingResult with the hidden states and logits of the last call
    """
    if batch <= 0:
        raise InvalidInputError(f"batch must be positive, got {batch}")
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    channels = make_channels(config)
    sequences = rng.uniform(-1.0, 1.0, size=(batch, config.seq_len, config.input_dim))

    outputs = {}

    def call():
        logits, cache = forward_batch(
            params, channels, sequences, config,
            workers=workers if parallel else 1,
            sequential=not parallel,
        )
        outputs["logits"], outputs["hidden"] = logits, cache.h_final

    result = _summarize(_time_calls(call, repeats))
    result.hidden = outputs["hidden"]
    result.logits = outputs["logits"]
    return result


def time_baseline(
    config: ModelConfig,
    batch: int,
    activation: Activation = Activation.RELU,
    repeats: int = 7,
    seed: int = 0
) -> TimingResult:
    """Time the baseline hidden computation over a seeded random batch."""
    if batch <= 0:
        raise InvalidInputError(f"batch must be positive, got {batch}")
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    channels = make_channels(config)
    sequences = rng.uniform(-1.0, 1.0, size=(batch, config.seq_len, config.input_dim))

    outputs = {}

    def call():
        outputs["hidden"] = np.stack([
            baseline_dft_activation(activation, params, channels, sequence, config)
            for sequence in sequences
        ])

    result = _summarize(_time_calls(call, repeats))
    result.hidden = outputs["hidden"]
    return result
