import math

import numpy as np
import pytest
from pydantic import ValidationError

from core.errors import InvalidInputError, NumericFailure
from core.model import (
    DC_PHASE,
    SQRT2,
    Activation,
    InputMode,
    ModelConfig,
    OscillatoryFourierNetwork,
    accumulate_channels,
    accumulate_channels_sequential,
    baseline_dft_activation,
    forward,
    forward_batch,
    forward_dft_form,
    init_params,
    input_phase,
    make_channels,
    param_count,
)


def random_config(rng, conv=None):
    conv = bool(rng.integers(2)) if conv is None else conv
    seq_len = int(rng.integers(6, 40))
    return ModelConfig(
        input_dim=int(rng.integers(1, 4)),
        hidden_dim=int(rng.integers(1, 6)),
        num_channels=int(rng.integers(1, 6)),
        base_freq=float(rng.uniform(0.5, 8.0)),
        seq_len=seq_len,
        output_dim=int(rng.integers(2, 5)),
        input_mode=InputMode.CONV1D if conv else InputMode.FULLY_CONNECTED,
        conv_window=int(rng.integers(1, 5)),
        conv_stride=int(rng.integers(1, 3)),
    )


def random_params(config, rng):
    params = init_params(config, int(rng.integers(1 << 30)))
    params.b_x = rng.uniform(-1.0, 1.0, size=params.b_x.shape)
    params.b_y = rng.uniform(-1.0, 1.0, size=params.b_y.shape)
    return params


def test_param_count_formula():
    fc = ModelConfig(input_dim=2, hidden_dim=4, num_channels=3, base_freq=1.0, seq_len=10, output_dim=5)
    assert param_count(fc) == 2 * 4 + 4 + 5 * 3 * 4 + 5

    conv = fc.model_copy(update={"input_mode": InputMode.CONV1D, "conv_window": 3})
    assert conv.effective_input_dim == 6
    assert param_count(conv) == 6 * 4 + 4 + 5 * 3 * 4 + 5


def test_conv_step_count_has_no_padding():
    config = ModelConfig(input_dim=1, hidden_dim=2, num_channels=1, base_freq=1.0, seq_len=10,
                         output_dim=2, input_mode=InputMode.CONV1D, conv_window=3, conv_stride=2)
    assert config.num_steps == 4
    sequence = np.arange(10.0)[:, None]
    from core.model import effective_inputs
    windows = effective_inputs(sequence, config)
    np.testing.assert_array_equal(windows, [[0, 1, 2], [2, 3, 4], [4, 5, 6], [6, 7, 8]])


def test_conv_window_longer_than_sequence_is_rejected():
    with pytest.raises(ValidationError):
        ModelConfig(input_dim=1, hidden_dim=2, num_channels=1, base_freq=1.0, seq_len=2,
                    output_dim=2, input_mode=InputMode.CONV1D, conv_window=3)


def test_channel_frequencies_double():
    config = ModelConfig(input_dim=1, hidden_dim=2, num_channels=4, base_freq=2.0, seq_len=128, output_dim=2)
    channels = make_channels(config)
    np.testing.assert_allclose(channels.omegas, [0.0, 4 * math.pi / 128, 8 * math.pi / 128, 16 * math.pi / 128])
    np.testing.assert_allclose(channels.coefficients, [math.sqrt(2) / 128] + [1 / 128] * 3)


def test_accumulation_matches_dft_form_on_random_configs():
    rng = np.random.default_rng(1234)
    for trial in range(100):
        config = random_config(rng, conv=trial % 2 == 0)
        params = random_params(config, rng)
        channels = make_channels(config)
        sequence = rng.normal(size=(config.seq_len, config.input_dim))

        _, cache = forward(params, channels, sequence, config)
        expected = forward_dft_form(params, channels, sequence, config)
        assert np.max(np.abs(cache.h_final[0] - expected)) <= 1e-9


def test_dc_channel_is_mean_of_sin_plus_cos():
    rng = np.random.default_rng(7)
    config = ModelConfig(input_dim=2, hidden_dim=3, num_channels=2, base_freq=1.0, seq_len=20, output_dim=2)
    params = random_params(config, rng)
    sequence = rng.normal(size=(20, 2))
    _, cache = forward(params, make_channels(config), sequence, config)
    phis = cache.phis[0]
    np.testing.assert_allclose(cache.h_final[0, 0], (np.sin(phis) + np.cos(phis)).mean(axis=0), atol=1e-12)


def test_readout_is_affine_in_concatenated_states():
    rng = np.random.default_rng(3)
    config = ModelConfig(input_dim=1, hidden_dim=4, num_channels=3, base_freq=1.0, seq_len=16, output_dim=3)
    params = random_params(config, rng)
    logits, cache = forward(params, make_channels(config), rng.normal(size=(16, 1)), config)
    h_cat = np.concatenate([cache.h_final[0, c] for c in range(3)])
    np.testing.assert_allclose(logits, params.W_y @ h_cat + params.b_y, atol=1e-12)


def test_hidden_states_stay_bounded_for_huge_inputs():
    rng = np.random.default_rng(11)
    config = ModelConfig(input_dim=3, hidden_dim=5, num_channels=4, base_freq=3.0, seq_len=50, output_dim=2)
    params = random_params(config, rng)
    sequence = rng.normal(size=(50, 3)) * 1e6
    _, cache = forward(params, make_channels(config), sequence, config)
    assert np.all(np.abs(cache.h_final[0, 0]) <= math.sqrt(2) + 1e-12)
    assert np.all(np.abs(cache.h_final[0, 1:]) <= 1.0 + 1e-12)


def test_accumulation_is_order_invariant():
    rng = np.random.default_rng(5)
    config = ModelConfig(input_dim=1, hidden_dim=4, num_channels=3, base_freq=2.0, seq_len=90, output_dim=2)
    channels = make_channels(config)
    phis = rng.uniform(-3, 3, size=(90, 4))
    steps = np.arange(1, 91, dtype=np.float64)
    order = rng.permutation(90)

    original = accumulate_channels(phis, steps, channels)
    shuffled = accumulate_channels(phis[order], steps[order], channels)
    assert np.max(np.abs(original - shuffled)) <= 1e-12


def test_worker_count_does_not_change_results():
    rng = np.random.default_rng(9)
    config = ModelConfig(input_dim=2, hidden_dim=6, num_channels=3, base_freq=1.5, seq_len=300, output_dim=4)
    params = random_params(config, rng)
    channels = make_channels(config)
    sequences = rng.normal(size=(5, 300, 2))

    single, _ = forward_batch(params, channels, sequences, config, workers=1)
    threaded, _ = forward_batch(params, channels, sequences, config, workers=4)
    np.testing.assert_array_equal(single, threaded)

    sequential, _ = forward_batch(params, channels, sequences, config, sequential=True)
    assert np.max(np.abs(single - sequential)) <= 1e-12


def test_sequential_reference_matches_blocked_sum():
    rng = np.random.default_rng(2)
    config = ModelConfig(input_dim=1, hidden_dim=3, num_channels=2, base_freq=1.0, seq_len=200, output_dim=2)
    channels = make_channels(config)
    phis = rng.uniform(-2, 2, size=(3, 200, 3))
    steps = np.arange(1, 201, dtype=np.float64)
    blocked = accumulate_channels(phis, steps, channels, workers=3)
    running = accumulate_channels_sequential(phis, steps, channels)
    assert np.max(np.abs(blocked - running)) <= 1e-12


def test_forward_does_not_mutate_params():
    rng = np.random.default_rng(4)
    config = ModelConfig(input_dim=1, hidden_dim=3, num_channels=2, base_freq=1.0, seq_len=12, output_dim=2)
    params = random_params(config, rng)
    before = params.copy()
    forward(params, make_channels(config), rng.normal(size=(12, 1)), config)
    for name, array in params.arrays().items():
        np.testing.assert_array_equal(array, before.arrays()[name])


def test_shape_mismatches_are_rejected():
    config = ModelConfig(input_dim=2, hidden_dim=3, num_channels=2, base_freq=1.0, seq_len=12, output_dim=2)
    params = init_params(config)
    channels = make_channels(config)
    with pytest.raises(InvalidInputError):
        forward(params, channels, np.zeros((12, 3)), config)
    with pytest.raises(InvalidInputError):
        forward(params, channels, np.zeros((11, 2)), config)

    other = config.model_copy(update={"hidden_dim": 4})
    with pytest.raises(InvalidInputError):
        forward(init_params(other), channels, np.zeros((12, 2)), config)


def test_non_finite_input_names_the_timestep():
    config = ModelConfig(input_dim=1, hidden_dim=3, num_channels=2, base_freq=1.0, seq_len=12, output_dim=2)
    params = init_params(config, seed=1)
    sequence = np.zeros((12, 1))
    sequence[4, 0] = np.inf
    with pytest.raises(NumericFailure, match="timestep 5"):
        forward(params, make_channels(config), sequence, config)


def test_baseline_forms_agree():
    rng = np.random.default_rng(8)
    config = ModelConfig(input_dim=2, hidden_dim=4, num_channels=3, base_freq=1.0, seq_len=30, output_dim=2)
    params = random_params(config, rng)
    channels = make_channels(config)
    sequence = rng.normal(size=(30, 2))
    for activation in Activation:
        shifted = baseline_dft_activation(activation, params, channels, sequence, config)
        split_form = baseline_dft_activation(activation, params, channels, sequence, config, split_form=True)
        np.testing.assert_allclose(shifted, split_form, atol=1e-12)
        assert shifted.shape == (3, 4)


def test_sigmoid_is_finite_for_extreme_phases():
    values = Activation.SIGMOID.apply(np.array([-1e4, 0.0, 1e4]))
    np.testing.assert_allclose(values, [0.0, 0.5, 1.0])


def test_network_wrapper_predicts_in_chunks():
    config = ModelConfig(input_dim=1, hidden_dim=3, num_channels=2, base_freq=1.0, seq_len=10, output_dim=3)
    model = OscillatoryFourierNetwork(config, seed=3)
    sequences = np.random.default_rng(0).normal(size=(7, 10, 1))
    full, _ = model.forward(sequences)
    np.testing.assert_allclose(model.logits(sequences, batch_size=3), full, atol=1e-12)
    assert model.predict(sequences).shape == (7,)


def test_init_is_seeded():
    config = ModelConfig(input_dim=2, hidden_dim=3, num_channels=2, base_freq=1.0, seq_len=10, output_dim=3)
    a, b = init_params(config, 5), init_params(config, 5)
    np.testing.assert_array_equal(a.W_x, b.W_x)
    assert np.all(a.b_x == 0) and np.all(a.b_y == 0)
    assert np.all(np.abs(a.W_x) <= 1 / math.sqrt(2))


def constant_phase_params(config, phase):
    """W_x = 0 and b_x = phase, so phi<t> = phase at every step."""
    params = init_params(config)
    params.W_x = np.zeros_like(params.W_x)
    params.b_x = np.full_like(params.b_x, phase)
    return params


def test_zero_phase_gives_unit_dc_and_dirichlet_ac():
    config = ModelConfig(input_dim=1, hidden_dim=2, num_channels=3, base_freq=1.5, seq_len=12, output_dim=2)
    channels = make_channels(config)
    params = constant_phase_params(config, 0.0)
    _, cache = forward(params, channels, np.ones((12, 1)), config)
    hidden = cache.h_final[0]

    np.testing.assert_allclose(hidden[0], 1.0, rtol=0, atol=1e-12)
    for i in (1, 2):
        expected = 0.0
        for t in range(1, 13):
            expected += math.cos(channels.omegas[i] * t)
        np.testing.assert_allclose(hidden[i], expected / 12, rtol=0, atol=1e-12)


def test_dft_form_with_quarter_turn_phase():
    config = ModelConfig(input_dim=2, hidden_dim=3, num_channels=3, base_freq=1.0, seq_len=9, output_dim=2)
    channels = make_channels(config)
    params = constant_phase_params(config, math.pi / 2)
    sequence = np.random.default_rng(4).normal(size=(9, 2))
    projected = forward_dft_form(params, channels, sequence, config)
    _, cache = forward(params, channels, sequence, config)

    for i in (1, 2):
        expected = sum(math.sin(channels.omegas[i] * t) for t in range(1, 10)) / 9
        np.testing.assert_allclose(projected[i], expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(cache.h_final[0, i], expected, rtol=0, atol=1e-12)


def test_single_step_at_the_channel_frequency():
    # N = 1 and f = 1/8 put omega_1 at pi/4
    config = ModelConfig(input_dim=1, hidden_dim=1, num_channels=2, base_freq=0.125, seq_len=1, output_dim=2)
    channels = make_channels(config)
    assert channels.omegas[1] == pytest.approx(math.pi / 4)
    params = constant_phase_params(config, math.pi / 4)
    _, cache = forward(params, channels, np.zeros((1, 1)), config)
    assert cache.h_final[0, 1, 0] == pytest.approx(1.0, abs=1e-12)
    assert forward_dft_form(params, channels, np.zeros((1, 1)), config)[1, 0] == pytest.approx(1.0, abs=1e-12)


def test_input_phase_matches_naive_matvec():
    rng = np.random.default_rng(21)
    config = ModelConfig(input_dim=4, hidden_dim=5, num_channels=1, base_freq=1.0, seq_len=3, output_dim=2)
    params = random_params(config, rng)
    for _ in range(10):
        x = rng.normal(size=4)
        phi = input_phase(params, x)
        for i in range(5):
            expected = params.b_x[i]
            for j in range(4):
                expected += params.W_x[i, j] * x[j]
            assert abs(phi[i] - expected) <= 1e-12 * max(1.0, abs(expected))

    with pytest.raises(InvalidInputError):
        input_phase(params, np.zeros(3))


def test_dc_offset_turns_one_cosine_into_sin_plus_cos():
    phi = np.linspace(-10 * math.pi, 10 * math.pi, 10_000)
    gap = SQRT2 * np.cos(phi - DC_PHASE) - (np.sin(phi) + np.cos(phi))
    assert np.max(np.abs(gap)) <= 1e-12


def test_baseline_relu_is_silent_for_negative_phases():
    config = ModelConfig(input_dim=1, hidden_dim=3, num_channels=3, base_freq=1.0, seq_len=10, output_dim=2)
    params = constant_phase_params(config, -0.3)
    sequence = np.random.default_rng(2).normal(size=(10, 1))
    hidden = baseline_dft_activation(Activation.RELU, params, make_channels(config), sequence, config)
    assert np.all(hidden == 0.0)


def test_baseline_sigmoid_at_zero_phase():
    config = ModelConfig(input_dim=1, hidden_dim=2, num_channels=3, base_freq=2.0, seq_len=11, output_dim=2)
    channels = make_channels(config)
    params = constant_phase_params(config, 0.0)
    hidden = baseline_dft_activation(Activation.SIGMOID, params, channels, np.zeros((11, 1)), config)
    for i in range(3):
        expected = 0.0
        for t in range(1, 12):
            expected += math.cos(channels.omegas[i] * t - math.pi / 4)
        np.testing.assert_allclose(hidden[i], math.sqrt(2) / (2 * 11) * expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(hidden[0], 0.5, rtol=0, atol=1e-12)
