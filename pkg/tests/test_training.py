import math

import numpy as np
import pytest

from core.data import Dataset, SyntheticTaskSpec, split, synth_frequency_task
from core.errors import InvalidInputError
from core.model import InputMode, ModelConfig, OscillatoryFourierNetwork, Params, forward, init_params, make_channels
from core.training import (
    BackwardMode,
    LossSpec,
    OptimizerState,
    TrainingSettings,
    apply_update,
    backward,
    batch_loss_and_grad,
    channel_input_grads,
    evaluate,
    finite_diff_gradients,
    fit,
    loss_and_output_grad,
    mode_scale_ratios,
    multi_seed_eval,
    phase_gradients,
    relative_error,
    train_epoch,
)

SYNTH_SETTINGS = TrainingSettings(epochs=30, batch_size=32, lr_initial=0.5, decay_factor=0.95)


def tiny_model(rng, conv):
    config = ModelConfig(
        input_dim=int(rng.integers(1, 3)),
        hidden_dim=int(rng.integers(2, 4)),
        num_channels=int(rng.integers(1, 4)),
        base_freq=float(rng.uniform(0.5, 3.0)),
        seq_len=int(rng.integers(5, 9)),
        output_dim=int(rng.integers(2, 4)),
        input_mode=InputMode.CONV1D if conv else InputMode.FULLY_CONNECTED,
        conv_window=2,
    )
    params = init_params(config, int(rng.integers(1 << 30)))
    params.b_x = rng.uniform(-1.0, 1.0, size=params.b_x.shape)
    params.b_y = rng.uniform(-0.5, 0.5, size=params.b_y.shape)
    sequence = rng.uniform(-1.0, 1.0, size=(config.seq_len, config.input_dim))
    return config, params, sequence


def assert_gradients_close(analytic, numeric, rel_tol=1e-5, abs_tol=1e-9):
    """Relative agreement, except where both values sit below finite-difference noise."""
    theirs = numeric.arrays()
    for name, mine in analytic.arrays().items():
        rel = relative_error(mine, theirs[name])
        ok = (rel <= rel_tol) | (np.abs(mine - theirs[name]) <= abs_tol)
        assert np.all(ok), f"{name}: max relative error {rel.max():.3e}"


def assert_uniform_mode_scales_each_channel(cache, dL_dy, params, channels):
    """Each channel's uniform-mode term is its exact term divided by sqrt(2)*C (DC) or C (AC)."""
    exact = channel_input_grads(cache, dL_dy, params, channels, BackwardMode.EXACT_CHAIN_RULE)
    uniform = channel_input_grads(cache, dL_dy, params, channels, BackwardMode.PAPER_FAITHFUL)
    count = channels.num_channels
    factors = np.full(count, float(count))
    factors[0] *= math.sqrt(2)
    for c in range(count):
        np.testing.assert_allclose(exact[c], factors[c] * uniform[c], rtol=1e-9, atol=1e-15)
        if np.any(uniform[c] != 0):
            assert np.sum(exact[c] * uniform[c]) > 0
    ratios = mode_scale_ratios(cache, dL_dy, params, channels)
    live = ~np.isnan(ratios)
    np.testing.assert_allclose(ratios[live], factors[live], rtol=1e-9)


@pytest.mark.parametrize("spec", list(LossSpec))
def test_exact_backward_matches_finite_differences(spec):
    rng = np.random.default_rng(2024 if spec is LossSpec.SOFTMAX_CROSS_ENTROPY else 2025)
    for trial in range(20):
        config, params, sequence = tiny_model(rng, conv=trial % 2 == 1)
        channels = make_channels(config)
        label = int(rng.integers(config.output_dim))

        logits, cache = forward(params, channels, sequence, config)
        _, dL_dy = loss_and_output_grad(logits, label, spec)
        analytic = backward(cache, dL_dy, params, channels, config, BackwardMode.EXACT_CHAIN_RULE)
        numeric = finite_diff_gradients(params, channels, sequence, label, config, spec, step=1e-5)
        assert_gradients_close(analytic, numeric)
        assert_uniform_mode_scales_each_channel(cache, dL_dy, params, channels)


def test_mse_accepts_real_targets():
    rng = np.random.default_rng(17)
    config, params, sequence = tiny_model(rng, conv=False)
    channels = make_channels(config)
    target = rng.normal(size=config.output_dim)
    logits, cache = forward(params, channels, sequence, config)
    _, dL_dy = loss_and_output_grad(logits, target, LossSpec.MEAN_SQUARED_ERROR)
    analytic = backward(cache, dL_dy, params, channels, config)
    numeric = finite_diff_gradients(params, channels, sequence, target, config, LossSpec.MEAN_SQUARED_ERROR, 1e-5)
    assert_gradients_close(analytic, numeric)

    with pytest.raises(InvalidInputError):
        loss_and_output_grad(logits, target, LossSpec.SOFTMAX_CROSS_ENTROPY)


def test_single_channel_modes_differ_by_sqrt2():
    rng = np.random.default_rng(31)
    config = ModelConfig(input_dim=2, hidden_dim=4, num_channels=1, base_freq=1.0, seq_len=12, output_dim=3)
    params = init_params(config, 1)
    channels = make_channels(config)
    sequences = rng.normal(size=(4, 12, 2))
    labels = np.array([0, 1, 2, 1])

    logits, cache = OscillatoryFourierNetwork(config, params).forward(sequences)
    _, dL_dy = batch_loss_and_grad(logits, labels, LossSpec.SOFTMAX_CROSS_ENTROPY)
    exact = backward(cache, dL_dy, params, channels, config, BackwardMode.EXACT_CHAIN_RULE)
    uniform = backward(cache, dL_dy, params, channels, config, BackwardMode.PAPER_FAITHFUL)

    np.testing.assert_allclose(exact.g_Wx, math.sqrt(2) * uniform.g_Wx, rtol=1e-9, atol=0)
    np.testing.assert_allclose(exact.g_bx, math.sqrt(2) * uniform.g_bx, rtol=1e-9, atol=0)
    np.testing.assert_array_equal(exact.g_Wy, uniform.g_Wy)
    assert abs(mode_scale_ratios(cache, dL_dy, params, channels)[0] - math.sqrt(2)) <= 1e-9


def test_per_channel_contributions_are_positively_proportional():
    rng = np.random.default_rng(32)
    config = ModelConfig(input_dim=1, hidden_dim=3, num_channels=4, base_freq=1.0, seq_len=16, output_dim=2)
    params = init_params(config, 2)
    channels = make_channels(config)
    logits, cache = forward(params, channels, rng.normal(size=(16, 1)), config)
    _, dL_dy = loss_and_output_grad(logits, 1, LossSpec.SOFTMAX_CROSS_ENTROPY)
    ratios = mode_scale_ratios(cache, dL_dy, params, channels)
    np.testing.assert_allclose(ratios, [4 * math.sqrt(2), 4.0, 4.0, 4.0], rtol=1e-9)


def test_phase_gradients_are_independent_per_timestep():
    rng = np.random.default_rng(41)
    config = ModelConfig(input_dim=1, hidden_dim=3, num_channels=3, base_freq=1.0, seq_len=10, output_dim=2)
    params = init_params(config, 3)
    channels = make_channels(config)
    _, cache = forward(params, channels, rng.normal(size=(10, 1)), config)
    dL_dy = np.array([0.3, -0.3])

    before = phase_gradients(cache, dL_dy, params, channels)
    cache.phis[0, 6] += 0.7
    after = phase_gradients(cache, dL_dy, params, channels)
    changed = np.any(before != after, axis=2)[0]
    assert changed.tolist() == [t == 6 for t in range(10)]

    grads = backward(cache, dL_dy, params, channels, config)
    np.testing.assert_allclose(grads.g_bx, after[0].sum(axis=0), atol=1e-12)


def test_confident_cross_entropy_has_near_zero_loss():
    loss, grad = loss_and_output_grad(np.array([20.0, -20.0]), 0, LossSpec.SOFTMAX_CROSS_ENTROPY)
    assert 0 <= loss < 1e-15
    assert abs(grad.sum()) < 1e-15
    assert np.all(np.abs(grad) < 1e-15)


def test_mse_definition():
    loss, grad = loss_and_output_grad(np.array([1.0, 0.0]), 1, LossSpec.MEAN_SQUARED_ERROR)
    assert loss == pytest.approx(1.0)
    np.testing.assert_allclose(grad, [1.0, -1.0])


def test_labels_out_of_range_are_rejected():
    with pytest.raises(InvalidInputError):
        batch_loss_and_grad(np.zeros((2, 3)), np.array([0, 3]), LossSpec.SOFTMAX_CROSS_ENTROPY)


def test_learning_rate_schedule():
    opt = OptimizerState(lr_initial=1e-3, decay_factor=0.7)
    opt.advance_epoch()
    opt.advance_epoch()
    assert opt.current_lr == pytest.approx(4.9e-4, rel=1e-12)
    with pytest.raises(InvalidInputError):
        OptimizerState(lr_initial=1e-3, decay_factor=0.0)


def test_update_descends():
    config = ModelConfig(input_dim=1, hidden_dim=4, num_channels=2, base_freq=1.0, seq_len=12, output_dim=2)
    params = init_params(config, 0)
    channels = make_channels(config)
    sequences = np.random.default_rng(6).normal(size=(8, 12, 1))
    labels = np.array([0, 1] * 4)
    model = OscillatoryFourierNetwork(config, params)

    logits, cache = model.forward(sequences)
    losses, dL_dy = batch_loss_and_grad(logits, labels, LossSpec.SOFTMAX_CROSS_ENTROPY)
    grads = backward(cache, dL_dy, params, channels, config)
    stepped = apply_update(params, grads, OptimizerState(lr_initial=1e-3))

    new_logits, _ = OscillatoryFourierNetwork(config, stepped).forward(sequences)
    new_losses, _ = batch_loss_and_grad(new_logits, labels, LossSpec.SOFTMAX_CROSS_ENTROPY)
    assert new_losses.mean() < losses.mean()
    np.testing.assert_allclose(stepped.b_y, params.b_y - 1e-3 * grads.g_by)


@pytest.fixture(scope="module")
def synth_splits():
    dataset = synth_frequency_task(SyntheticTaskSpec(class_frequencies=(2.0, 7.0), seed=0))
    return split(dataset, 0.8, seed=0)


def synth_config(num_channels):
    return ModelConfig(input_dim=1, hidden_dim=8, num_channels=num_channels, base_freq=2.0,
                       seq_len=128, output_dim=2)


def test_three_channels_learn_the_frequency_task(synth_splits):
    train, test = synth_splits
    model = OscillatoryFourierNetwork(synth_config(3), seed=0)
    records = fit(model, train, test, SYNTH_SETTINGS, wall_clock=False)
    assert len(records) == 30
    assert records[0].lr == 0.5
    assert records[1].lr == pytest.approx(0.5 * 0.95)
    assert records[-1].test_acc >= 0.95
    assert records[-1].train_acc >= 0.95


def test_dc_only_model_cannot_separate_frequencies(synth_splits):
    train, test = synth_splits
    model = OscillatoryFourierNetwork(synth_config(1), seed=0)
    fit(model, train, test, SYNTH_SETTINGS, wall_clock=False)
    assert evaluate(model, test).accuracy <= 0.80


def test_multi_seed_evaluation_is_stable_and_repeatable(synth_splits):
    train, test = synth_splits
    seeds = [0, 1, 2, 3, 4]
    first = multi_seed_eval(synth_config(3), train, test, seeds, SYNTH_SETTINGS)
    again = multi_seed_eval(synth_config(3), train, test, seeds, SYNTH_SETTINGS)
    assert first.std <= 0.05
    assert first.accuracies == again.accuracies
    assert [seed for seed, _ in first.accuracies] == seeds

    with pytest.raises(InvalidInputError):
        multi_seed_eval(synth_config(3), train, test, [0], SYNTH_SETTINGS)


def test_train_epoch_counts_updates_and_evaluate_is_read_only(synth_splits):
    train, test = synth_splits
    model = OscillatoryFourierNetwork(synth_config(2), seed=0)
    report = train_epoch(model, train, OptimizerState(lr_initial=0.1), batch_size=50, shuffle_seed=(0, 1))
    assert report.num_updates == math.ceil(len(train) / 50)

    before = model.params.copy()
    evaluate(model, test)
    np.testing.assert_array_equal(model.params.W_x, before.W_x)


def test_zero_epochs_returns_no_records(synth_splits):
    train, test = synth_splits
    model = OscillatoryFourierNetwork(synth_config(2), seed=0)
    assert fit(model, train, test, TrainingSettings(epochs=0)) == []


def test_symmetric_cross_entropy():
    loss, grad = loss_and_output_grad(np.array([0.0, 0.0]), 0, LossSpec.SOFTMAX_CROSS_ENTROPY)
    assert loss == pytest.approx(math.log(2), rel=1e-15)
    np.testing.assert_allclose(grad, [-0.5, 0.5], rtol=0, atol=1e-15)


@pytest.mark.parametrize("spec", list(LossSpec))
def test_output_gradient_matches_loss_differences(spec):
    rng = np.random.default_rng(55)
    step = 1e-6
    for _ in range(10):
        logits = rng.normal(size=4)
        label = int(rng.integers(4))
        _, grad = loss_and_output_grad(logits, label, spec)
        for k in range(4):
            bump = np.zeros(4)
            bump[k] = step
            upper, _ = loss_and_output_grad(logits + bump, label, spec)
            lower, _ = loss_and_output_grad(logits - bump, label, spec)
            numeric = (upper - lower) / (2 * step)
            assert abs(grad[k] - numeric) <= 1e-6 * max(abs(numeric), 1e-2)


def test_zero_upstream_gradient_gives_zero_gradients():
    rng = np.random.default_rng(61)
    config, params, sequence = tiny_model(rng, conv=False)
    channels = make_channels(config)
    _, cache = forward(params, channels, sequence, config)
    for mode in BackwardMode:
        grads = backward(cache, np.zeros(config.output_dim), params, channels, config, mode)
        for name, array in grads.arrays().items():
            assert np.all(array == 0.0), name


def test_finite_differences_are_step_robust():
    rng = np.random.default_rng(62)
    config, params, sequence = tiny_model(rng, conv=True)
    channels = make_channels(config)
    coarse = finite_diff_gradients(params, channels, sequence, 1, config, LossSpec.SOFTMAX_CROSS_ENTROPY, step=1e-5)
    fine = finite_diff_gradients(params, channels, sequence, 1, config, LossSpec.SOFTMAX_CROSS_ENTROPY, step=1e-6)
    for name, array in coarse.arrays().items():
        assert np.max(np.abs(array - fine.arrays()[name])) <= 1e-8, name


def test_zero_input_leaves_input_weights_without_gradient():
    rng = np.random.default_rng(63)
    config, params, _ = tiny_model(rng, conv=False)
    channels = make_channels(config)
    sequence = np.zeros((config.seq_len, config.input_dim))
    logits, cache = forward(params, channels, sequence, config)
    _, dL_dy = loss_and_output_grad(logits, 0, LossSpec.SOFTMAX_CROSS_ENTROPY)

    analytic = backward(cache, dL_dy, params, channels, config)
    numeric = finite_diff_gradients(params, channels, sequence, 0, config, LossSpec.SOFTMAX_CROSS_ENTROPY)
    assert np.all(analytic.g_Wx == 0.0)
    assert np.all(numeric.g_Wx == 0.0)
    assert np.any(analytic.g_bx != 0.0)


def quadratic_fixture():
    """One neuron, one step, one DC channel, one output: y = v (sin phi + cos phi) + c with phi = w x + b."""
    config = ModelConfig(input_dim=1, hidden_dim=1, num_channels=1, base_freq=1.0, seq_len=1, output_dim=1)
    params = Params(
        W_x=np.array([[0.4]]),
        b_x=np.array([-0.2]),
        W_y=np.array([[0.7]]),
        b_y=np.array([0.1]),
    )
    return config, params, np.array([[1.5]]), np.array([0.3])


def test_quadratic_fixture_matches_hand_derived_gradient():
    config, params, sequence, target = quadratic_fixture()
    channels = make_channels(config)
    w, b, v, c = 0.4, -0.2, 0.7, 0.1
    x = 1.5
    phi = w * x + b
    y = v * (math.sin(phi) + math.cos(phi)) + c
    residual = 2 * (y - 0.3)
    slope = math.cos(phi) - math.sin(phi)
    expected = {
        "W_x": residual * v * slope * x,
        "b_x": residual * v * slope,
        "W_y": residual * (math.sin(phi) + math.cos(phi)),
        "b_y": residual,
    }

    logits, cache = forward(params, channels, sequence, config)
    assert logits[0] == pytest.approx(y, abs=1e-12)
    _, dL_dy = loss_and_output_grad(logits, target, LossSpec.MEAN_SQUARED_ERROR)
    analytic = backward(cache, dL_dy, params, channels, config)
    numeric = finite_diff_gradients(params, channels, sequence, target, config, LossSpec.MEAN_SQUARED_ERROR)
    for name, value in expected.items():
        assert abs(analytic.arrays()[name].item() - value) <= 1e-12, name
        assert abs(numeric.arrays()[name].item() - value) <= 1e-7, name


def test_descent_on_the_quadratic_fixture_never_increases_loss():
    config, params, sequence, target = quadratic_fixture()
    channels = make_channels(config)
    opt = OptimizerState(lr_initial=1e-2, decay_factor=1.0)
    losses = []
    for _ in range(100):
        logits, cache = forward(params, channels, sequence, config)
        loss, dL_dy = loss_and_output_grad(logits, target, LossSpec.MEAN_SQUARED_ERROR)
        losses.append(loss)
        params = apply_update(params, backward(cache, dL_dy, params, channels, config), opt)
    assert all(later <= earlier for earlier, later in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_zero_learning_rate_changes_nothing(synth_splits):
    train, test = synth_splits
    model = OscillatoryFourierNetwork(synth_config(2), seed=0)
    before = model.params.copy()
    records = fit(model, train, test, TrainingSettings(epochs=3, batch_size=32, lr_initial=0.0), wall_clock=False)
    for name, array in before.arrays().items():
        np.testing.assert_array_equal(model.params.arrays()[name], array)
    assert [r.lr for r in records] == [0.0, 0.0, 0.0]
    assert records[1].train_loss == pytest.approx(records[0].train_loss, rel=1e-12)
    assert records[2].train_loss == pytest.approx(records[0].train_loss, rel=1e-12)


def test_constant_labels_are_fit_exactly():
    rng = np.random.default_rng(70)
    dataset = Dataset(
        sequences=0.1 * rng.normal(size=(100, 12, 1)),
        labels=np.zeros(100, dtype=np.int64),
        name="constant",
        num_classes=2,
    )
    config = ModelConfig(input_dim=1, hidden_dim=3, num_channels=2, base_freq=1.0, seq_len=12, output_dim=2)
    model = OscillatoryFourierNetwork(config, seed=0)
    fit(model, dataset, None, TrainingSettings(epochs=5, batch_size=20, lr_initial=0.5, decay_factor=1.0))
    assert evaluate(model, dataset).accuracy == 1.0


def test_untrained_model_scores_chance_on_balanced_binary_data():
    rng = np.random.default_rng(71)
    sequences = rng.normal(size=(600, 10, 1))
    # every sequence appears once per class
    dataset = Dataset(
        sequences=np.concatenate([sequences, sequences]),
        labels=np.repeat([0, 1], 600),
        name="balanced",
        num_classes=2,
    )
    config = ModelConfig(input_dim=1, hidden_dim=4, num_channels=3, base_freq=1.0, seq_len=10, output_dim=2)
    accuracy = evaluate(OscillatoryFourierNetwork(config, seed=5), dataset).accuracy
    assert abs(accuracy - 0.5) <= 0.05
