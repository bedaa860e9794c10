import math

import numpy as np
import pytest

from conftest import make_dataset
from fedrisk import models
from fedrisk.errors import ConfigError, LayoutError, TrainingDivergedError
from fedrisk.models import (
    AdamState,
    LinearModel,
    MlpModel,
    ParamVector,
    adam_init,
    adam_step,
    bce_loss,
    flatten,
    init_params,
    load_params,
    lr_forward,
    lr_gradient,
    lr_predict_proba,
    mlp_backprop,
    mlp_forward,
    mlp_predict_proba,
    param_count,
    predict_proba,
    relu,
    relu_derivative,
    save_params,
    sigmoid,
    train,
    unflatten,
)


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_symmetry(self):
        for z in np.linspace(-30, 30, 101):
            assert sigmoid(z) + sigmoid(-z) == pytest.approx(1.0, abs=1e-12)

    def test_extreme_negative_stays_positive(self):
        value = sigmoid(-800.0)
        assert 0.0 < value <= 1e-300
        assert math.isfinite(value)

    def test_extreme_positive_stays_below_one(self):
        assert 0.5 < sigmoid(800.0) < 1.0

    def test_vectorized(self):
        z = np.array([-800.0, 0.0, 800.0])
        out = sigmoid(z)
        assert out.shape == (3,)
        assert out[1] == 0.5
        assert np.all((out > 0.0) & (out < 1.0))


class TestBceLoss:
    def test_perfect_prediction(self):
        assert bce_loss(1, 1 - 1e-12) == pytest.approx(0.0, abs=1e-11)

    def test_half_probability_positive(self):
        assert bce_loss(1, 0.5) == pytest.approx(math.log(2), rel=1e-12)

    def test_half_probability_negative(self):
        assert bce_loss(0, 0.5) == pytest.approx(math.log(2), rel=1e-12)

    def test_clamps_zero_prediction(self):
        assert math.isfinite(bce_loss(1, 0.0))


class TestLrForward:
    def test_zero_parameters(self):
        m = LinearModel(w=np.zeros(4), b=0.0)
        assert lr_forward(m, np.array([3.0, -1.0, 2.0, 0.5])) == 0.5

    def test_zero_input(self):
        m = LinearModel(w=np.array([1.0]), b=0.0)
        assert lr_forward(m, np.array([0.0])) == 0.5

    def test_analytic_value(self):
        m = LinearModel(w=np.array([2.0]), b=-1.0)
        assert lr_forward(m, np.array([1.0])) == pytest.approx(0.7310585786300049, abs=1e-15)

    def test_dimension_mismatch(self):
        m = LinearModel(w=np.array([1.0, 2.0]), b=0.0)
        with pytest.raises(LayoutError):
            lr_forward(m, np.array([1.0]))


class TestLrGradient:
    def test_zero_parameter_case(self):
        m = LinearModel(w=np.zeros(1), b=0.0)
        grad_w, grad_b = lr_gradient(m, np.array([[1.0]]), np.array([1.0]))
        assert grad_w[0] == -0.5
        assert grad_b == -0.5

    def test_exact_prediction_gives_zero_gradient(self):
        m = LinearModel(w=np.zeros(2), b=0.0)
        grad_w, grad_b = lr_gradient(m, np.array([[1.0, 2.0]]), np.array([0.5]))
        assert np.all(grad_w == 0.0) and grad_b == 0.0

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        h = 1e-6
        for _ in range(25):
            d = int(rng.integers(1, 6))
            batch = int(rng.integers(1, 8))
            X = rng.normal(size=(batch, d))
            y = rng.integers(0, 2, size=batch).astype(np.float64)
            w = rng.normal(size=d)
            b = float(rng.normal())

            def loss(w_vec, b_val):
                probs = sigmoid(X @ w_vec + b_val)
                return float(np.mean(bce_loss(y, probs)))

            grad_w, grad_b = lr_gradient(LinearModel(w=w, b=b), X, y)
            fd_w = np.empty(d)
            for j in range(d):
                e = np.zeros(d)
                e[j] = h
                fd_w[j] = (loss(w + e, b) - loss(w - e, b)) / (2 * h)
            fd_b = (loss(w, b + h) - loss(w, b - h)) / (2 * h)
            assert rel_err(grad_w, fd_w) <= 1e-4
            assert rel_err(grad_b, fd_b) <= 1e-4

    def test_l2_term(self):
        w = np.array([2.0, -3.0])
        m = LinearModel(w=w, b=0.0)
        g0, _ = lr_gradient(m, np.array([[1.0, 1.0]]), np.array([1.0]), l2_lambda=0.0)
        g1, _ = lr_gradient(m, np.array([[1.0, 1.0]]), np.array([1.0]), l2_lambda=0.1)
        assert np.allclose(g1 - g0, 0.1 * w)

    def test_permutation_invariance_full_batch(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(40, 5))
        y = rng.integers(0, 2, 40).astype(np.float64)
        m = LinearModel(w=rng.normal(size=5), b=0.3)
        perm = rng.permutation(40)
        g1, b1 = lr_gradient(m, X, y)
        g2, b2 = lr_gradient(m, X[perm], y[perm])
        assert np.allclose(g1, g2, atol=1e-12)
        assert b1 == pytest.approx(b2, abs=1e-12)


class TestRelu:
    def test_values(self):
        assert relu(-3.0) == 0.0
        assert relu(2.0) == 2.0

    def test_derivative_convention_at_zero(self):
        assert relu_derivative(0.0) == 0.0
        assert relu_derivative(-1.0) == 0.0
        assert relu_derivative(1e-9) == 1.0


def _zero_mlp(d):
    return unflatten(ParamVector(np.zeros(param_count("mlp", d)), models.make_layout_tag("mlp", d)))


class TestMlpForward:
    def test_zero_network_outputs_half(self):
        m = _zero_mlp(3)
        rng = np.random.default_rng(0)
        for _ in range(5):
            prob, _ = mlp_forward(m, rng.normal(size=3))
            assert prob == 0.5

    def test_output_in_open_interval(self):
        m = unflatten(init_params("mlp", 4, seed=1))
        rng = np.random.default_rng(1)
        for _ in range(10):
            prob, _ = mlp_forward(m, rng.normal(scale=100, size=4))
            assert 0.0 < prob < 1.0

    def test_dead_unit_scaling_is_invisible(self):
        rng = np.random.default_rng(2)
        m = unflatten(init_params("mlp", 3, seed=3))
        # unit 0 sees only non-positive pre-activations for non-negative inputs
        m.W1[0] = -np.abs(m.W1[0])
        m.b1[0] = -1.0
        x = np.abs(rng.normal(size=3))
        prob_before, _ = mlp_forward(m, x)
        m.W1[0] *= 5.0
        prob_after, _ = mlp_forward(m, x)
        assert prob_before == prob_after

    def test_cache_contents(self):
        m = unflatten(init_params("mlp", 2, seed=4))
        x = np.array([0.5, -0.25])
        prob, cache = mlp_forward(m, x)
        assert np.array_equal(cache.x, x)
        assert np.array_equal(cache.a1, np.maximum(cache.z1, 0.0))
        assert sigmoid(cache.z3) == prob

    def test_dimension_mismatch(self):
        m = _zero_mlp(3)
        with pytest.raises(LayoutError):
            mlp_forward(m, np.zeros(4))


class TestMlpBackprop:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1234)
        h = 1e-6
        d = 4
        checked = 0
        while checked < 20:
            pv = ParamVector(
                rng.normal(scale=0.4, size=param_count("mlp", d)),
                models.make_layout_tag("mlp", d),
            )
            X = rng.normal(size=(5, d))
            y = rng.integers(0, 2, size=5).astype(np.float64)
            # stay clear of the loss clamp, where the clamped loss goes flat
            # but the analytic formula (intentionally) does not
            probs = mlp_predict_proba(unflatten(pv), X)
            if np.any(probs < 1e-9) or np.any(probs > 1 - 1e-9):
                continue
            checked += 1

            grads = mlp_backprop(unflatten(pv), X, y)
            analytic = np.concatenate(
                [grads.W1.ravel(), grads.b1, grads.W2.ravel(), grads.b2, grads.W3.ravel(), [grads.b3]]
            )

            def loss(values):
                probs = mlp_predict_proba(unflatten(ParamVector(values, pv.layout_tag)), X)
                return float(np.mean(bce_loss(y, probs)))

            fd = np.empty(analytic.shape[0])
            for j in range(analytic.shape[0]):
                e = np.zeros(analytic.shape[0])
                e[j] = h
                fd[j] = (loss(pv.values + e) - loss(pv.values - e)) / (2 * h)
            assert rel_err(analytic, fd) <= 1e-3

    def test_zero_input_batch_kills_input_weight_gradient(self):
        m = unflatten(init_params("mlp", 3, seed=9))
        m.b1[:] = 0.0
        grads = mlp_backprop(m, np.zeros((4, 3)), np.array([1.0, 0.0, 1.0, 0.0]))
        assert np.all(grads.W1 == 0.0)

    def test_duplicated_sample_mean_invariance(self):
        rng = np.random.default_rng(11)
        m = unflatten(init_params("mlp", 3, seed=12))
        x = rng.normal(size=(1, 3))
        y = np.array([1.0])
        single = mlp_backprop(m, x, y)
        double = mlp_backprop(m, np.vstack([x, x]), np.array([1.0, 1.0]))
        # BLAS FMA use can shift the doubled sum by one ulp
        for name in ("W1", "b1", "W2", "b2", "W3"):
            assert np.allclose(getattr(single, name), getattr(double, name), rtol=1e-13, atol=0)
        assert single.b3 == pytest.approx(double.b3, rel=1e-13)


class TestAdamStep:
    def test_first_step_size_is_learning_rate(self):
        rng = np.random.default_rng(3)
        values = np.zeros(6)
        g = rng.normal(size=6)
        p = ParamVector(values, models.make_layout_tag("lr", 5))
        new_p, state = adam_step(p, ParamVector(g, p.layout_tag), adam_init(6), lr=0.01)
        assert state.t == 1
        assert np.allclose(np.abs(new_p.values), 0.01, rtol=1e-5)
        assert np.array_equal(np.sign(new_p.values), -np.sign(g))

    def test_zero_gradient_is_identity(self):
        p = ParamVector(np.arange(4.0), models.make_layout_tag("lr", 3))
        zero = ParamVector(np.zeros(4), p.layout_tag)
        state = adam_init(4)
        for _ in range(3):
            p2, state = adam_step(p, zero, state, lr=0.1)
            assert np.array_equal(p2.values, p.values)
            p = p2

    def test_deterministic(self):
        p = ParamVector(np.ones(4), models.make_layout_tag("lr", 3))
        g = ParamVector(np.array([1.0, -2.0, 0.5, 0.0]), p.layout_tag)
        a, sa = adam_step(p, g, adam_init(4), lr=0.05)
        b, sb = adam_step(p, g, adam_init(4), lr=0.05)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(sa.m, sb.m) and np.array_equal(sa.v, sb.v)

    def test_layout_mismatch(self):
        p = ParamVector(np.zeros(4), models.make_layout_tag("lr", 3))
        g = ParamVector(np.zeros(5), models.make_layout_tag("lr", 4))
        with pytest.raises(LayoutError):
            adam_step(p, g, adam_init(4), lr=0.1)


class TestFlattenUnflatten:
    def test_lr_length(self):
        pv = flatten(LinearModel(w=np.array([1.0, 2.0, 3.0]), b=4.0))
        assert pv.values.shape == (4,)
        assert pv.layout_tag == "lr:d=3:v1"

    def test_mlp_length_matches_shape_products(self):
        d = 10
        shapes = [(32, d), (32,), (16, 32), (16,), (1, 16), (1,)]
        expected = sum(int(np.prod(s)) for s in shapes)
        assert expected == 897
        assert param_count("mlp", d) == expected
        pv = init_params("mlp", d, seed=0)
        assert pv.values.shape == (expected,)

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(8)
        for family, d in (("lr", 6), ("mlp", 5)):
            pv = ParamVector(rng.normal(size=param_count(family, d)), models.make_layout_tag(family, d))
            back = flatten(unflatten(pv))
            assert back.layout_tag == pv.layout_tag
            assert np.array_equal(back.values, pv.values)

    def test_length_mismatch_rejected(self):
        with pytest.raises(LayoutError):
            unflatten(ParamVector(np.zeros(5), models.make_layout_tag("lr", 3)))

    def test_malformed_tag_rejected(self):
        with pytest.raises(LayoutError):
            unflatten(ParamVector(np.zeros(4), "nonsense"))


class TestInitParams:
    def test_lr_all_zeros(self):
        pv = init_params("lr", 5, seed=123)
        assert pv.values.shape == (6,)
        assert np.all(pv.values == 0.0)

    def test_mlp_seeded_determinism(self):
        a = init_params("mlp", 7, seed=99)
        b = init_params("mlp", 7, seed=99)
        assert np.array_equal(a.values, b.values)
        c = init_params("mlp", 7, seed=100)
        assert not np.array_equal(a.values, c.values)

    def test_mlp_weight_bounds(self):
        d = 9
        m = unflatten(init_params("mlp", d, seed=5))
        assert np.max(np.abs(m.W1)) <= np.sqrt(6.0 / (d + 32))
        assert np.max(np.abs(m.W2)) <= np.sqrt(6.0 / (32 + 16))
        assert np.max(np.abs(m.W3)) <= np.sqrt(6.0 / (16 + 1))
        assert np.all(m.b1 == 0.0) and np.all(m.b2 == 0.0) and m.b3 == 0.0


def separable_dataset(n=60, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.vstack(
        [rng.normal(loc=-2.0, scale=0.3, size=(half, 2)), rng.normal(loc=2.0, scale=0.3, size=(half, 2))]
    )
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    return make_dataset(X, y)


class TestTrain:
    def test_lr_converges_on_separable_data(self):
        ds = separable_dataset()
        cfg = models.TrainConfig(
            learning_rate=0.1, epochs=200, batch_size=16, l2_lambda=0.0, optimizer="sgd", shuffle_seed=1
        )
        result = train("lr", ds, cfg, init_params("lr", 2, seed=0))
        preds = (predict_proba(result.params, ds.X) >= 0.5).astype(int)
        assert np.mean(preds == ds.y) == 1.0

    def test_zero_epochs_returns_init(self):
        ds = separable_dataset()
        init = init_params("mlp", 2, seed=3)
        cfg = models.TrainConfig(learning_rate=0.001, epochs=0, batch_size=8, optimizer="adam")
        result = train("mlp", ds, cfg, init)
        assert np.array_equal(result.params.values, init.values)
        assert result.epoch_losses == ()

    def test_deterministic(self):
        ds = separable_dataset(seed=4)
        for family, cfg in (
            ("lr", models.lr_train_defaults(epochs=5, shuffle_seed=21)),
            ("mlp", models.mlp_train_defaults(epochs=3, shuffle_seed=21)),
        ):
            init = init_params(family, 2, seed=10)
            a = train(family, ds, cfg, init)
            b = train(family, ds, cfg, init)
            assert np.array_equal(a.params.values, b.params.values)
            assert a.epoch_losses == b.epoch_losses

    def test_full_batch_loss_non_increasing(self):
        ds = separable_dataset(n=40, seed=6)
        cfg = models.TrainConfig(
            learning_rate=0.01, epochs=50, batch_size=len(ds), l2_lambda=0.0, optimizer="sgd", shuffle_seed=0
        )
        result = train("lr", ds, cfg, init_params("lr", 2, seed=0))
        losses = np.asarray(result.epoch_losses)
        assert np.all(np.diff(losses) <= 1e-9)

    def test_divergence_reported_with_epoch(self):
        ds = separable_dataset(n=20, seed=8)
        cfg = models.TrainConfig(
            learning_rate=1e12, epochs=60, batch_size=20, l2_lambda=1e-4, optimizer="sgd", shuffle_seed=1
        )
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(TrainingDivergedError) as exc:
            train("lr", ds, cfg, init_params("lr", 2, seed=0))
        assert exc.value.epoch >= 1
        assert exc.value.learning_rate == 1e12

    def test_wrong_optimizer_family_rejected(self):
        ds = separable_dataset(n=20)
        cfg = models.TrainConfig(learning_rate=0.1, epochs=1, batch_size=8, optimizer="adam")
        with pytest.raises(ConfigError):
            train("lr", ds, cfg, init_params("lr", 2, seed=0))

    def test_layout_family_mismatch_rejected(self):
        ds = separable_dataset(n=20)
        cfg = models.lr_train_defaults(epochs=1)
        with pytest.raises(LayoutError):
            train("lr", ds, cfg, init_params("mlp", 2, seed=0))

    def test_single_batch_epoch_matches_manual_sgd_step(self):
        ds = separable_dataset(n=30, seed=9)
        lr, l2 = 0.05, 1e-3
        cfg = models.TrainConfig(
            learning_rate=lr, epochs=1, batch_size=len(ds), l2_lambda=l2, optimizer="sgd", shuffle_seed=5
        )
        init = init_params("lr", 2, seed=0)
        result = train("lr", ds, cfg, init)

        m = unflatten(init)
        grad_w, grad_b = lr_gradient(m, ds.X, ds.y.astype(float), l2_lambda=l2)
        manual = np.concatenate([m.w - lr * grad_w, [m.b - lr * grad_b]])
        assert np.allclose(result.params.values, manual, atol=1e-12)

    def test_single_batch_epoch_matches_manual_adam_step(self):
        ds = separable_dataset(n=30, seed=10)
        cfg = models.TrainConfig(
            learning_rate=0.002, epochs=1, batch_size=len(ds), optimizer="adam", shuffle_seed=5
        )
        init = init_params("mlp", 2, seed=2)
        result = train("mlp", ds, cfg, init)

        grads = mlp_backprop(unflatten(init), ds.X, ds.y.astype(float))
        flat_g = np.concatenate(
            [grads.W1.ravel(), grads.b1, grads.W2.ravel(), grads.b2, grads.W3.ravel(), [grads.b3]]
        )
        manual, _ = adam_step(
            init, ParamVector(flat_g, init.layout_tag), adam_init(init.values.shape[0]), lr=0.002
        )
        assert np.allclose(result.params.values, manual.values, atol=1e-10)


def test_save_load_round_trip(tmp_path):
    pv = init_params("mlp", 4, seed=77)
    path = tmp_path / "params.json"
    save_params(pv, path)
    back = load_params(path)
    assert back.layout_tag == pv.layout_tag
    assert np.array_equal(back.values, pv.values)
