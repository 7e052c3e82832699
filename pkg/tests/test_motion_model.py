import math

import numpy as np
import pytest

from rio.config import ScenarioConfig, TrainingConfig
from rio.core import Pose, Quaternion
from rio.dataset import build_training_set
from rio.errors import ConfigurationError, DataError
from rio.fusion import UkfState
from rio.motion_model import (
    WEIGHT_NAMES,
    ConstantVelocityModel,
    LstmMotionModel,
    LstmParams,
    MotionModelInput,
    Normalizer,
    TrainingHyper,
    TrainingSet,
    cv_predict,
    imu_window,
    init_params,
    load_params,
    lstm_backward,
    lstm_forward,
    make_training_windows,
    predict_displacement,
    save_params,
    train,
    zero_params,
)
from rio.radar_sim import RadarConfig


def state_with_velocity(v):
    return UkfState.initial(Pose.identity(), velocity=v)


@pytest.mark.parametrize(
    "v, dt, expected",
    [
        ((0.0, 0.0, 0.0), 0.05, (0.0, 0.0, 0.0)),
        ((0.5, 0.0, 0.0), 0.05, (0.025, 0.0, 0.0)),
        ((0.4, 0.3, 0.0), 0.1, (0.04, 0.03, 0.0)),
    ],
)
def test_cv_predict(v, dt, expected):
    np.testing.assert_allclose(cv_predict(MotionModelInput([], state_with_velocity(v), dt)), expected, atol=1e-15)


def test_cv_predict_is_linear():
    a = cv_predict(MotionModelInput([], state_with_velocity((0.2, -0.1, 0.3)), 0.05))
    b = cv_predict(MotionModelInput([], state_with_velocity((0.4, -0.2, 0.6)), 0.1))
    np.testing.assert_allclose(b, 4.0 * a)


def test_input_needs_positive_dt():
    with pytest.raises(ConfigurationError):
        MotionModelInput([], state_with_velocity((0.0, 0.0, 0.0)), 0.0)


class Test_lstm_forward:
    def test_zero_weights(self):
        np.testing.assert_array_equal(lstm_forward(zero_params(8), np.ones((20, 6))), np.zeros(3))

    def test_single_unit_by_hand(self):
        p = zero_params(1, window=1)
        w = p.weights
        x = np.array([0.5, -1.0, 0.2, 0.0, 0.3, 0.1])
        w["Wx_fwd"][0, 0] = 1.0  # input gate
        w["Wx_fwd"][2, 1] = -0.5  # output gate
        w["Wx_fwd"][3, 4] = 2.0  # cell candidate
        w["b_fwd"][3] = 0.1
        w["V"][:, 0] = [1.0, -2.0, 0.5]
        w["c"][:] = [0.0, 0.1, 0.0]

        sig = lambda z: 1.0 / (1.0 + math.exp(-z))  # noqa: E731
        i, o, g = sig(0.5), sig(0.5), math.tanh(0.7)
        h = o * math.tanh(i * g)
        np.testing.assert_allclose(lstm_forward(p, x[None]), [h, -2.0 * h + 0.1, 0.5 * h], atol=1e-12)

    def test_backward_direction_reads_reversed_sequence(self):
        rng = np.random.default_rng(0)
        p = init_params(4, rng, dropout_rate=0.0, window=6)
        p.weights["V"][:, :4] = 0.0
        seq = rng.normal(size=(6, 6))
        flipped = p.copy()
        for part in ("Wx", "Wh", "b"):
            flipped.weights[f"{part}_fwd"] = p.weights[f"{part}_bwd"].copy()
        flipped.weights["V"] = np.concatenate([p.weights["V"][:, 4:], np.zeros((3, 4))], axis=1)
        np.testing.assert_allclose(lstm_forward(p, seq), lstm_forward(flipped, seq[::-1]), atol=1e-12)

    def test_inference_is_deterministic(self):
        p = init_params(6, np.random.default_rng(1))
        seq = np.random.default_rng(2).normal(size=(20, 6))
        np.testing.assert_array_equal(lstm_forward(p, seq), lstm_forward(p, seq))

    def test_dropout_only_while_training(self):
        p = init_params(6, np.random.default_rng(1), dropout_rate=0.5)
        seq = np.random.default_rng(2).normal(size=(20, 6))
        a = lstm_forward(p, seq, training=True, rng=np.random.default_rng(3))
        assert not np.allclose(a, lstm_forward(p, seq))

    def test_batch_matches_single(self):
        p = init_params(5, np.random.default_rng(4))
        batch = np.random.default_rng(5).normal(size=(3, 20, 6))
        out = lstm_forward(p, batch)
        assert out.shape == (3, 3)
        np.testing.assert_allclose(out[1], lstm_forward(p, batch[1]), atol=1e-12)

    @pytest.mark.parametrize("shape", [(20, 5), (0, 6), (2, 2, 2, 6), (19, 6), (3, 21, 6)])
    def test_shape_mismatch(self, shape):
        with pytest.raises(ConfigurationError):
            lstm_forward(zero_params(4), np.zeros(shape))


class Test_lstm_backward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        p = init_params(4, rng, dropout_rate=0.0, window=5)
        seq = rng.normal(size=(2, 5, 6))
        target = rng.normal(size=(2, 3))
        _, grads = lstm_backward(p, seq, target)
        h = 1e-6
        for name in WEIGHT_NAMES:
            w = p.weights[name]
            numeric = np.zeros_like(w)
            for idx in np.ndindex(w.shape):
                old = w[idx]
                w[idx] = old + h
                up, _ = lstm_backward(p, seq, target)
                w[idx] = old - h
                down, _ = lstm_backward(p, seq, target)
                w[idx] = old
                numeric[idx] = (up - down) / (2 * h)
            err = np.abs(grads[name] - numeric)
            assert np.all(err <= 1e-4 * np.maximum(np.abs(numeric), np.abs(grads[name])) + 1e-8), name

    def test_zero_error_gives_zero_gradient(self):
        p = zero_params(3, window=4)
        loss, grads = lstm_backward(p, np.ones((4, 6)), np.zeros(3))
        assert loss == 0.0
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)

    def test_window_mismatch(self):
        with pytest.raises(ConfigurationError):
            lstm_backward(zero_params(3, window=4), np.ones((5, 6)), np.zeros(3))

    def test_loss_weight_scales_gradients(self):
        rng = np.random.default_rng(12)
        p = init_params(4, rng, window=5)
        seq, target = rng.normal(size=(5, 6)), rng.normal(size=3)
        loss1, g1 = lstm_backward(p, seq, target)
        loss2, g2 = lstm_backward(p, seq, target, loss_weight=2.0)
        assert loss2 == pytest.approx(2.0 * loss1)
        for name in WEIGHT_NAMES:
            np.testing.assert_allclose(g2[name], 2.0 * g1[name])


def linear_training_set(n=64, window=5, seed=0):
    rng = np.random.default_rng(seed)
    inputs = rng.normal(size=(n, window, 6))
    targets = inputs[:, :, 3:6].mean(axis=1) * 0.05
    ids = np.arange(n) % 8
    return TrainingSet(inputs, targets, ids, validation_ids={7})


class Test_train:
    hyper = TrainingHyper(lr=1e-2, epochs=30, batch=16, hidden=8, window=5, dropout=0.0, seed=3)

    def test_loss_decreases(self):
        params = train(linear_training_set(), self.hyper)
        history = params.history
        assert len(history["train"]) == 30
        assert history["train"][-1] < 0.5 * history["train"][0]
        assert np.isfinite(history["validation"]).all()

    def test_zero_epochs_returns_initialization(self):
        hyper = self.hyper.model_copy(update={"epochs": 0})
        params = train(linear_training_set(), hyper)
        expected = init_params(hyper.hidden, np.random.default_rng(hyper.seed), hyper.dropout, hyper.window)
        for name in WEIGHT_NAMES:
            np.testing.assert_array_equal(params.weights[name], expected.weights[name])

    def test_same_seed_same_parameters(self):
        hyper = self.hyper.model_copy(update={"epochs": 3, "dropout": 0.25})
        a, b = train(linear_training_set(), hyper), train(linear_training_set(), hyper)
        for name in WEIGHT_NAMES:
            np.testing.assert_array_equal(a.weights[name], b.weights[name])

    def test_window_mismatch(self):
        with pytest.raises(ConfigurationError):
            train(linear_training_set(window=4), self.hyper)

    def test_all_validation(self):
        ts = linear_training_set()
        ts = TrainingSet(ts.inputs, ts.targets, np.zeros(len(ts.inputs)), validation_ids={0})
        with pytest.raises(DataError):
            train(ts, self.hyper)


def test_training_set_split_is_by_trajectory():
    ts = linear_training_set()
    train_x, _ = ts.train_split()
    val_x, _ = ts.validation_split()
    assert len(train_x) == 56
    assert len(val_x) == 8


def test_normalizer_round_trip():
    data = np.random.default_rng(0).normal(3.0, 2.0, size=(100, 6))
    norm = Normalizer.fit(data)
    np.testing.assert_allclose(norm.denormalize(norm.normalize(data)), data, atol=1e-9)
    constant = Normalizer.fit(np.ones((10, 3)))
    np.testing.assert_array_equal(constant.std, 1.0)


def test_save_and_load(tmp_path):
    params = train(linear_training_set(), TrainingHyper(epochs=1, hidden=4, window=5))
    path = save_params(params, tmp_path / "lstm.json")
    loaded = load_params(path)
    windows = linear_training_set().inputs[:4]
    np.testing.assert_allclose(predict_displacement(loaded, windows), predict_displacement(params, windows), atol=1e-12)
    assert loaded.history == params.history
    assert loaded.window == 5


def test_load_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "something-else"}')
    with pytest.raises(DataError):
        load_params(bad)
    with pytest.raises(DataError):
        load_params(tmp_path / "missing.json")


def test_params_validate_shapes():
    weights = {k: v for k, v in zero_params(4).weights.items()}
    weights["V"] = np.zeros((3, 7))
    with pytest.raises(ConfigurationError):
        LstmParams(weights)


class Test_models:
    def test_constant_velocity_model(self):
        sigma = np.zeros((2, 13))
        sigma[:, 7:10] = [[0.5, 0.0, 0.0], [0.0, 0.4, 0.0]]
        out = ConstantVelocityModel().bind(np.zeros((20, 6)), 0.05)(sigma)
        np.testing.assert_allclose(out, [[0.025, 0.0, 0.0], [0.0, 0.02, 0.0]])

    def test_lstm_model_rotates_into_world_frame(self):
        p = zero_params(2, window=20)
        p.weights["c"][:] = [0.03, 0.0, 0.0]
        sigma = np.zeros((2, 13))
        sigma[0, 3:7] = Quaternion.identity().as_array()
        sigma[1, 3:7] = Quaternion.from_yaw(math.pi / 2).as_array() * 2.0
        out = LstmMotionModel(p).bind(np.zeros((7, 6)), 0.05)(sigma)
        np.testing.assert_allclose(out, [[0.03, 0.0, 0.0], [0.0, 0.03, 0.0]], atol=1e-12)

    def test_lstm_model_adds_the_residual_to_constant_velocity(self):
        p = zero_params(2, window=20)
        p.weights["c"][:] = [0.0, 0.001, 0.0]
        sigma = np.zeros((2, 13))
        sigma[:, 7:10] = [0.5, 0.0, 0.0]
        sigma[0, 3:7] = Quaternion.identity().as_array()
        sigma[1, 3:7] = Quaternion.from_yaw(math.pi / 2).as_array()
        out = LstmMotionModel(p).bind(np.zeros((20, 6)), 0.05)(sigma)
        np.testing.assert_allclose(out, [[0.025, 0.001, 0.0], [0.024, 0.0, 0.0]], atol=1e-12)

    def test_untrained_lstm_model_is_constant_velocity(self):
        sigma = np.zeros((3, 13))
        sigma[:, 3:7] = Quaternion.from_yaw(0.3).as_array()
        sigma[:, 7:10] = [[0.5, 0.0, 0.0], [0.1, -0.4, 0.0], [0.0, 0.0, 0.2]]
        window = np.random.default_rng(0).normal(size=(20, 6))
        lstm = LstmMotionModel(zero_params(4)).bind(window, 0.05)(sigma)
        np.testing.assert_allclose(lstm, ConstantVelocityModel().bind(window, 0.05)(sigma), atol=1e-15)

    def test_predict_uses_state_mean(self):
        state = state_with_velocity((0.5, 0.0, 0.0))
        np.testing.assert_allclose(ConstantVelocityModel().predict(MotionModelInput([], state, 0.1)), [0.05, 0.0, 0.0])


class Test_windows:
    t = np.arange(0.0, 1.0, 0.01)
    data = np.column_stack([np.arange(100.0)] + [np.zeros(100)] * 5)

    def test_last_readings_of_the_interval(self):
        w = imu_window(self.t, self.data, 0.095, 0.5, 20)
        assert w.shape == (20, 6)
        np.testing.assert_array_equal(w[:, 0], np.arange(31.0, 51.0))

    def test_short_interval_is_left_padded(self):
        w = imu_window(self.t, self.data, 0.095, 0.125, 5)
        np.testing.assert_array_equal(w[:, 0], [10.0, 10.0, 10.0, 11.0, 12.0])

    def test_empty_interval_holds_latest(self):
        w = imu_window(self.t, self.data, 0.1001, 0.1002, 3)
        np.testing.assert_array_equal(w[:, 0], [10.0, 10.0, 10.0])

    def test_targets_are_body_frame(self):
        frame_t = np.array([0.0, 0.5])
        positions = np.array([[0.0, 0.0, 0.0], [0.0, 0.1, 0.0]])
        quats = np.array([Quaternion.from_yaw(math.pi / 2).as_array()] * 2)
        inputs, targets = make_training_windows(self.t, self.data, frame_t, positions, quats, 4)
        assert inputs.shape == (1, 4, 6)
        np.testing.assert_allclose(targets, [[0.1, 0.0, 0.0]], atol=1e-12)

    def test_targets_subtract_constant_velocity(self):
        frame_t = np.array([0.0, 0.5, 1.0])
        positions = np.array([[0.0, 0.0, 0.0], [0.2, 0.01, 0.0], [0.4, 0.02, 0.0]])
        quats = np.array([Quaternion.identity().as_array()] * 3)
        velocities = np.array([[0.4, 0.0, 0.0], [0.4, 0.02, 0.0], [0.4, 0.02, 0.0]])
        _, targets = make_training_windows(self.t, self.data, frame_t, positions, quats, 4, velocities)
        np.testing.assert_allclose(targets, [[0.0, 0.01, 0.0], [0.0, 0.0, 0.0]], atol=1e-12)


@pytest.mark.slow
def test_learned_residual_beats_constant_velocity_on_sharp_turns():
    training = TrainingConfig()
    ts = build_training_set(training, ScenarioConfig(), RadarConfig(), base_seed=0)
    params = train(ts, training.hyper)
    val_x, val_y = ts.validation_split()
    assert len(val_x) > 100
    # with the true velocity, constant velocity misses exactly the target
    cv_error = float(np.sqrt(np.mean(np.sum(val_y * val_y, axis=1))))
    assert params.history["validation"][-1] < 0.1 * cv_error
