import math

import numpy as np
import pytest

from polarlens.lstm import (
    LSTMConfig,
    LSTMModel,
    TrainConfig,
    TrainingDiverged,
    classify,
    init_params,
    load_model,
    loss_and_grads,
    lstm_forward,
    pack_model,
    save_model,
    stack_sequences,
    train,
    unpack_model,
)
from polarlens.numerics import Rng, ShapeError, grad_check, softmax_rows
from polarlens.optim import flatten_params, unflatten_params
from polarlens.text import SequenceMatrix


def zero_model(d=3, h=4, t=5, pooling="last"):
    cfg = LSTMConfig(input_dim=d, hidden_dim=h, pooling=pooling, timesteps=t)
    z = np.zeros
    return LSTMModel(
        W_f=z((h, d + h)), W_i=z((h, d + h)), W_o=z((h, d + h)), W_g=z((h, d + h)),
        b_f=z(h), b_i=z(h), b_o=z(h), b_g=z(h),
        W_c=z((2, h)), b_c=z(2), config=cfg,
    )


def random_model(d=3, h=4, t=5, pooling="last", seed=0):
    cfg = LSTMConfig(input_dim=d, hidden_dim=h, pooling=pooling, timesteps=t)
    params = init_params(cfg, Rng(seed))
    return unpack_model(params, cfg)


def random_sequence(d, t, seed):
    rng = np.random.default_rng(seed)
    return SequenceMatrix(values=rng.standard_normal((d, t)), real_token_count=t)


def scalar_sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_lstm_oracle(values, model):
    """Step-by-step per-coordinate recurrence, independent of the kernels."""
    d, t = values.shape
    h_dim = model.config.hidden_dim
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    states = []
    for step in range(t):
        z = np.concatenate([values[:, step], h])
        f = np.array([scalar_sigmoid(float(model.W_f[r] @ z) + model.b_f[r]) for r in range(h_dim)])
        i = np.array([scalar_sigmoid(float(model.W_i[r] @ z) + model.b_i[r]) for r in range(h_dim)])
        o = np.array([scalar_sigmoid(float(model.W_o[r] @ z) + model.b_o[r]) for r in range(h_dim)])
        g = np.array([math.tanh(float(model.W_g[r] @ z) + model.b_g[r]) for r in range(h_dim)])
        c = f * c + i * g
        h = o * np.tanh(c)
        states.append(h.copy())
    return np.array(states)


class TestForward:
    def test_zero_model_gives_zero_states(self):
        model = zero_model()
        m = random_sequence(3, 5, 0)
        states, pooled = lstm_forward(m, model)
        assert np.array_equal(states, np.zeros((5, 4)))
        assert np.array_equal(pooled, np.zeros(4))

    def test_single_timestep_poolings_agree(self):
        m = random_sequence(3, 1, 1)
        last = lstm_forward(m, random_model(t=1, pooling="last", seed=3))[1]
        mean = lstm_forward(m, random_model(t=1, pooling="mean", seed=3))[1]
        assert np.array_equal(last, mean)

    def test_matches_scalar_loop_oracle(self):
        model = random_model(d=3, h=4, t=5, seed=7)
        m = random_sequence(3, 5, 7)
        states, pooled = lstm_forward(m, model)
        oracle = scalar_lstm_oracle(m.values, model)
        assert np.max(np.abs(states - oracle)) <= 1e-12
        assert np.max(np.abs(pooled - oracle[-1])) <= 1e-12

    def test_mean_pooling_matches_oracle_mean(self):
        model = random_model(d=3, h=4, t=6, pooling="mean", seed=9)
        m = random_sequence(3, 6, 9)
        _, pooled = lstm_forward(m, model)
        oracle = scalar_lstm_oracle(m.values, model)
        assert np.max(np.abs(pooled - oracle.mean(axis=0))) <= 1e-12

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            lstm_forward(random_sequence(4, 5, 0), random_model(d=3))
        with pytest.raises(ShapeError):
            lstm_forward(random_sequence(3, 9, 0), random_model(d=3, t=5))

    def test_mean_pooler_permutation_invariant(self):
        states = np.random.default_rng(0).standard_normal((7, 4))
        perm = np.random.default_rng(1).permutation(7)
        assert np.allclose(states.mean(axis=0), states[perm].mean(axis=0), atol=1e-12)


class TestClassify:
    def test_zero_model_is_uniform(self):
        probs = classify(random_sequence(3, 5, 2), zero_model())
        assert np.allclose(probs, [0.5, 0.5], atol=1e-15)

    def test_swapping_head_rows_swaps_probs(self):
        model = random_model(seed=11)
        m = random_sequence(3, 5, 11)
        p = classify(m, model)
        swapped = random_model(seed=11)
        swapped.W_c = model.W_c[::-1].copy()
        swapped.b_c = model.b_c[::-1].copy()
        q = classify(m, swapped)
        assert np.allclose(p, q[::-1], atol=1e-15)

    def test_matches_composed_oracles(self):
        model = random_model(d=2, h=3, t=4, seed=13)
        m = random_sequence(2, 4, 13)
        oracle_states = scalar_lstm_oracle(m.values, model)
        oracle_probs = softmax_rows(model.W_c @ oracle_states[-1] + model.b_c)
        assert np.max(np.abs(classify(m, model) - oracle_probs)) <= 1e-12

    def test_probs_are_distribution(self):
        for seed in range(5):
            p = classify(random_sequence(3, 5, seed), random_model(seed=seed))
            assert abs(float(p.sum()) - 1.0) <= 1e-12
            assert np.all(p >= 0)


class TestGradients:
    @pytest.mark.parametrize("pooling", ["last", "mean"])
    def test_bptt_matches_finite_differences(self, pooling):
        cfg = LSTMConfig(input_dim=3, hidden_dim=4, pooling=pooling, timesteps=5)
        params = init_params(cfg, Rng(5))
        rng = np.random.default_rng(5)
        xb = np.ascontiguousarray(rng.standard_normal((5, 2, 3)))
        labels = np.array([0, 1])
        _, grads = loss_and_grads(params, xb, labels, pooling)
        vec, layout = flatten_params(params)
        gvec, _ = flatten_params(grads)

        def f(v):
            loss, _ = loss_and_grads(unflatten_params(v, layout), xb, labels, pooling)
            return loss

        assert grad_check(f, gvec, vec) <= 1e-4

    def test_every_tensor_has_nonzero_gradient(self):
        cfg = LSTMConfig(input_dim=3, hidden_dim=4, pooling="mean", timesteps=5)
        params = init_params(cfg, Rng(6))
        xb = np.ascontiguousarray(np.random.default_rng(6).standard_normal((5, 3, 3)))
        _, grads = loss_and_grads(params, xb, np.array([0, 1, 0]), "mean")
        for name, g in grads.items():
            assert np.any(g != 0.0), name


def separable_set(n, d=4, t=6, seed=0):
    rng = np.random.default_rng(seed)
    seqs = []
    labels = []
    for k in range(n):
        label = k % 2
        base = 1.0 if label == 0 else -1.0
        vals = base * np.ones((d, t)) + 0.1 * rng.standard_normal((d, t))
        seqs.append(SequenceMatrix(values=vals, real_token_count=t))
        labels.append(label)
    return seqs, labels


class TestTrain:
    def test_learns_separable_data_within_three_epochs(self):
        train_set = separable_set(60, seed=1)
        val_set = separable_set(20, seed=2)
        cfg = TrainConfig(epochs=3, batch_size=8, seed=0)
        lcfg = LSTMConfig(input_dim=4, hidden_dim=6, pooling="mean", timesteps=6)
        model, log = train(train_set, val_set, cfg, lcfg)
        assert log["best_val_accuracy"] == 1.0
        assert len(log["epochs"]) <= 3

    def test_loss_decreases_on_separable_set(self):
        train_set = separable_set(60, seed=3)
        val_set = separable_set(20, seed=4)
        cfg = TrainConfig(epochs=2, batch_size=8, seed=1)
        lcfg = LSTMConfig(input_dim=4, hidden_dim=6, pooling="last", timesteps=6)
        _, log = train(train_set, val_set, cfg, lcfg)
        assert log["epochs"][-1]["train_loss"] < log["epochs"][0]["train_loss"]

    def test_deterministic_given_seed(self):
        train_set = separable_set(30, seed=5)
        val_set = separable_set(10, seed=6)
        cfg = TrainConfig(epochs=2, batch_size=8, seed=9)
        lcfg = LSTMConfig(input_dim=4, hidden_dim=5, pooling="mean", timesteps=6)
        m1, _ = train(train_set, val_set, cfg, lcfg)
        m2, _ = train(train_set, val_set, cfg, lcfg)
        for name in ("W_f", "W_i", "W_o", "W_g", "b_f", "b_i", "b_o", "b_g", "W_c", "b_c"):
            assert np.array_equal(getattr(m1, name), getattr(m2, name)), name

    def test_single_class_rejected(self):
        seqs, _ = separable_set(10, seed=7)
        with pytest.raises(ValueError):
            train(
                (seqs, [0] * 10),
                separable_set(4, seed=8),
                TrainConfig(epochs=1),
                LSTMConfig(input_dim=4, hidden_dim=3, timesteps=6),
            )

    def test_divergence_names_epoch(self):
        seqs, labels = separable_set(16, seed=9)
        seqs[3].values[0, 0] = np.nan  # poisoned batch makes the loss non-finite
        val_set = separable_set(8, seed=10)
        cfg = TrainConfig(epochs=2, batch_size=16, seed=0)
        lcfg = LSTMConfig(input_dim=4, hidden_dim=3, pooling="mean", timesteps=6)
        with pytest.raises(TrainingDiverged, match="epoch 0"):
            train((seqs, labels), val_set, cfg, lcfg)

    def test_float32_training_runs(self):
        train_set = separable_set(60, seed=1)
        val_set = separable_set(20, seed=2)
        cfg = TrainConfig(epochs=3, batch_size=8, seed=0, dtype="float32")
        lcfg = LSTMConfig(input_dim=4, hidden_dim=6, pooling="mean", timesteps=6)
        model, log = train(train_set, val_set, cfg, lcfg)
        assert model.W_f.dtype == np.float64
        assert log["best_val_accuracy"] >= 0.9


class TestPackingAndSerialization:
    def test_pack_unpack_round_trip(self):
        model = random_model(d=3, h=4, seed=21)
        again = unpack_model(pack_model(model), model.config)
        for name in ("W_f", "W_i", "W_o", "W_g", "b_f", "b_i", "b_o", "b_g", "W_c", "b_c"):
            assert np.array_equal(getattr(model, name), getattr(again, name)), name

    def test_save_load_bit_exact(self, tmp_path):
        model = random_model(d=3, h=4, seed=22)
        path = tmp_path / "model.plt"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.config == model.config
        for name in ("W_f", "W_i", "W_o", "W_g", "b_f", "b_i", "b_o", "b_g", "W_c", "b_c"):
            assert np.array_equal(getattr(model, name), getattr(loaded, name)), name

    def test_save_is_byte_deterministic(self, tmp_path):
        model = random_model(seed=23)
        p1, p2 = tmp_path / "a.plt", tmp_path / "b.plt"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_stack_sequences_layout(self):
        seqs, _ = separable_set(3, d=2, t=4, seed=24)
        x = stack_sequences(seqs)
        assert x.shape == (3, 4, 2)
        assert np.array_equal(x[1], seqs[1].values.T)
