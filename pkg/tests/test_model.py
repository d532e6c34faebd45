import numpy as np
import pytest

from augcal_lab.numerics import Rng, softmax, log_softmax
from augcal_lab.data import LabeledDataset, generate_gaussian_shift, \
    GaussianShiftConfig
from augcal_lab.losses import ObjectiveConfig, cross_entropy
from augcal_lab.model import (MlpParams, TrainConfig, init_mlp, forward,
                              backward, predict, hidden_features, train,
                              fit_temperature, apply_temperature,
                              save_checkpoint, load_checkpoint,
                              TrainingDiverged)

FD_STEP = 1e-7


def separable_blobs(seed, n=240, d=6, k=3, spread=4.0):
    """Linearly separable class blobs for trainer sanity checks."""
    rng = Rng(seed, "blobs")
    labels = np.arange(n) % k
    centers = spread * np.eye(k, d)
    x = centers[labels] + 0.3 * rng.standard_normal((n, d))
    return LabeledDataset(x, labels, k, "source", "tabular")


def plain_objective():
    return ObjectiveConfig(lambda_uda=0.0, lambda_cal=0.0,
                           cal_choice="none", uda_choice="none")


class TestForwardBackward:
    def test_zero_weights_uniform_softmax(self):
        params = MlpParams([4, 3], [np.zeros((4, 3))], [np.zeros(3)])
        logits, _ = forward(params, Rng(0, "x").normal(size=(5, 4)))
        assert np.allclose(softmax(logits), 1 / 3, atol=1e-15)

    def test_linear_net_reads_out_weight_columns(self):
        w = Rng(1, "w").normal(size=(4, 3))
        params = MlpParams([4, 3], [w.copy()], [np.zeros(3)])
        logits, _ = forward(params, np.eye(4))
        assert np.allclose(logits, w, atol=1e-15)

    def test_shape_mismatch_rejected(self):
        params = init_mlp([4, 3], Rng(0, "i"))
        with pytest.raises(ValueError):
            forward(params, np.zeros((2, 5)))

    def test_full_gradient_check_two_hidden_layers(self):
        rng = Rng(2, "fd")
        params = init_mlp([6, 5, 4, 3], rng.substream("init"))
        x = rng.normal(size=(7, 6))
        y = rng.integers(0, 3, size=7)
        logits, cache = forward(params, x)
        gw, gb = backward(params, cache, cross_entropy(logits, y).grad_logits)
        worst = 0.0
        for li in range(len(params.weights)):
            for arr, grad in ((params.weights[li], gw[li]),
                              (params.biases[li], gb[li])):
                flat = arr.reshape(-1)
                gflat = grad.reshape(-1)
                for idx in range(flat.size):
                    orig = flat[idx]
                    flat[idx] = orig + FD_STEP
                    up = cross_entropy(forward(params, x)[0], y).value
                    flat[idx] = orig - FD_STEP
                    dn = cross_entropy(forward(params, x)[0], y).value
                    flat[idx] = orig
                    fd = (up - dn) / (2 * FD_STEP)
                    rel = abs(fd - gflat[idx]) / max(1e-8, abs(fd), abs(gflat[idx]))
                    worst = max(worst, rel)
        assert worst < 1e-4

    def test_he_init_keeps_activation_variance_sane(self):
        rng = Rng(3, "he")
        params = init_mlp([64, 64, 64, 8], rng.substream("init"))
        x = rng.standard_normal((512, 64))
        _, (activations, _) = forward(params, x)
        for act in activations[1:-1]:
            v = float(np.var(act))
            assert 0.5 <= v <= 2.0, f"hidden variance {v}"

    def test_hidden_features_hook(self):
        params = init_mlp([5, 7, 2], Rng(4, "i"))
        x = Rng(5, "x").normal(size=(9, 5))
        feats = hidden_features(params, x)
        assert feats.shape == (9, 7)
        assert np.all(feats >= 0.0)   # post-ReLU


class TestTrainer:
    def test_separable_source_reaches_99_percent(self):
        source = separable_blobs(0)
        target = source.features_only()
        cfg = TrainConfig(hidden_sizes=(16,), steps=500, seed=0,
                          objective=plain_objective())
        result = train(source, target, cfg)
        _, _, pred, _ = predict(result.params, source.features_flat())
        assert float(np.mean(pred == source.labels)) >= 0.99

    def test_deterministic_given_config(self):
        source = separable_blobs(1)
        cfg = TrainConfig(hidden_sizes=(8,), steps=120, seed=7,
                          objective=ObjectiveConfig(lambda_uda=0.1,
                                                    lambda_cal=1.0,
                                                    cal_choice="dca",
                                                    uda_choice="entmin"))
        r1 = train(source, source.features_only(), cfg)
        r2 = train(source, source.features_only(), cfg)
        for w1, w2 in zip(r1.params.weights, r2.params.weights):
            assert np.array_equal(w1, w2)
        for b1, b2 in zip(r1.params.biases, r2.params.biases):
            assert np.array_equal(b1, b2)

    def test_loss_decreases_over_first_fifty_steps(self):
        drops = []
        for seed in range(5):
            source = separable_blobs(seed)
            cfg = TrainConfig(hidden_sizes=(16,), steps=51, seed=seed,
                              eval_every=50, objective=plain_objective())
            history = train(source, source.features_only(), cfg).history
            drops.append(history[-1]["total"] < history[0]["total"])
        assert np.median(drops) == 1.0

    def test_divergence_guard(self):
        source = separable_blobs(2)
        cfg = TrainConfig(hidden_sizes=(8,), steps=60, learning_rate=1e14,
                          seed=0, objective=plain_objective())
        with pytest.raises(TrainingDiverged):
            train(source, source.features_only(), cfg)

    def test_selftrain_path_runs_with_warmup(self):
        src, tgt, _ = generate_gaussian_shift(
            GaussianShiftConfig(n_per_domain=300, dim=2, mean_shift=0.5, seed=3))
        cfg = TrainConfig(
            hidden_sizes=(8,), steps=150, seed=3,
            objective=ObjectiveConfig(lambda_uda=0.5, lambda_cal=0.0,
                                      cal_choice="none", uda_choice="selftrain",
                                      selftrain_warmup=50))
        result = train(src, tgt.features_only(), cfg)
        assert result.params.all_finite()

    def test_history_snapshots(self):
        source = separable_blobs(4)
        cfg = TrainConfig(hidden_sizes=(8,), steps=100, eval_every=25, seed=0,
                          objective=plain_objective())
        history = train(source, source.features_only(), cfg).history
        assert [h["step"] for h in history] == [0, 25, 50, 75, 99]
        for key in ("total", "ce", "uda", "cal", "source_eval_accuracy",
                    "source_eval_nll"):
            assert key in history[0]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_mlp([6, 5, 3], Rng(8, "ck"))
        save_checkpoint(params, tmp_path / "ck", extra={"seed": 8, "step": 42})
        back, manifest = load_checkpoint(tmp_path / "ck")
        assert manifest["layer_sizes"] == [6, 5, 3]
        assert manifest["step"] == 42
        for a, b in zip(params.weights, back.weights):
            assert np.array_equal(a, b)
        for a, b in zip(params.biases, back.biases):
            assert np.array_equal(a, b)

    def test_rewrite_byte_identical(self, tmp_path):
        params = init_mlp([4, 3], Rng(9, "ck"))
        save_checkpoint(params, tmp_path / "a", extra={"seed": 0})
        save_checkpoint(params, tmp_path / "b", extra={"seed": 0})
        assert (tmp_path / "a" / "weights.bin").read_bytes() == \
            (tmp_path / "b" / "weights.bin").read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()


def nll_of(logits, labels, t):
    logp = log_softmax(logits / t)
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


def binary_fixture_optimal_at_one(n=1000):
    """Two-class rows (a, 0) with an 80/20 label split and a = logit(0.8):
    the NLL-minimizing temperature is exactly 1."""
    a = np.log(0.8 / 0.2)
    logits = np.zeros((n, 2))
    logits[:, 0] = a
    labels = np.zeros(n, dtype=np.int64)
    labels[int(0.8 * n):] = 1
    return logits, labels


class TestTemperature:
    def test_fixture_optimal_at_one(self):
        logits, labels = binary_fixture_optimal_at_one()
        t = fit_temperature(logits, labels)
        assert abs(t.t - 1.0) < 1e-3
        assert not t.degenerate

    def test_overconfident_fixture_gives_t_above_one(self):
        rng = Rng(10, "temp")
        labels = rng.integers(0, 4, size=400)
        logits = 10.0 * np.eye(4)[labels]
        flip = rng.uniform(size=400) < 0.2
        logits[flip] = np.roll(logits[flip], 1, axis=1)
        t = fit_temperature(logits, labels)
        assert t.t > 1.0

    def test_matches_dense_grid_oracle(self):
        rng = Rng(11, "temp")
        logits = 3.0 * rng.normal(size=(200, 4))
        labels = rng.integers(0, 4, size=200)
        t = fit_temperature(logits, labels)
        grid = np.arange(0.05, 10.0 + 1e-9, 1e-4)
        best = None
        for chunk in np.array_split(grid, 200):
            scaled = logits[None, :, :] / chunk[:, None, None]
            m = scaled.max(axis=2, keepdims=True)
            logp = scaled - m - np.log(np.sum(np.exp(scaled - m), axis=2,
                                              keepdims=True))
            nlls = -logp[:, np.arange(200), labels].mean(axis=1)
            i = int(np.argmin(nlls))
            if best is None or nlls[i] < best[1]:
                best = (chunk[i], nlls[i])
        assert abs(t.t - best[0]) < 1e-3

    def test_never_worse_than_unit_temperature(self):
        for seed in range(5):
            rng = Rng(seed, "nll")
            logits = 2.0 * rng.normal(size=(150, 3))
            labels = rng.integers(0, 3, size=150)
            t = fit_temperature(logits, labels)
            assert nll_of(logits, labels, t.t) <= nll_of(logits, labels, 1.0) + 1e-12

    def test_degenerate_constant_logits(self):
        t = fit_temperature(np.ones((10, 3)), np.zeros(10, dtype=np.int64))
        assert t.t == 1.0 and t.degenerate

    def test_row_permutation_invariant(self):
        rng = Rng(12, "perm")
        logits = rng.normal(size=(80, 3))
        labels = rng.integers(0, 3, size=80)
        perm = rng.permutation(80)
        t1 = fit_temperature(logits, labels)
        t2 = fit_temperature(logits[perm], labels[perm])
        assert t1.t == t2.t

    def test_apply_preserves_argmax(self):
        rng = Rng(13, "app")
        logits = rng.normal(size=(500, 5))
        base = np.argmax(logits, axis=1)
        for t in (0.07, 0.5, 2.0, 9.5):
            assert np.array_equal(np.argmax(apply_temperature(logits, t), axis=1),
                                  base)

    def test_apply_t1_is_plain_softmax(self):
        z = Rng(14, "t1").normal(size=(6, 4))
        assert np.array_equal(apply_temperature(z, 1.0), softmax(z))

    def test_high_temperature_flattens_monotonically(self):
        z = np.array([[2.0, 0.0]])
        p20 = apply_temperature(z, 20.0)[0, 0]
        p5 = apply_temperature(z, 5.0)[0, 0]
        assert 0.5 < p20 < p5
        assert abs(p20 - 1.0 / (1.0 + np.exp(-0.1))) < 1e-12

    def test_invalid_temperature(self):
        with pytest.raises(ValueError):
            apply_temperature(np.zeros((2, 2)), 0.0)

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            fit_temperature(np.zeros((1, 2)), np.array([0]))
