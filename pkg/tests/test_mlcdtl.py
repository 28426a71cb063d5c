"""Tests for multi-label consistent deep transform learning."""

import time

import numpy as np
import pytest
import scipy.linalg
import scipy.optimize

from config import TrainConfig
from dataio import standardize_features, synth_dataset
from errors import DataError, DimensionError
from mlcdtl import (
    dtl_code_candidate,
    dtl_infer,
    dtl_init_state,
    dtl_intermediate_candidate,
    dtl_label_map_candidate,
    dtl_objective,
    dtl_predict,
    dtl_sample_objective,
    dtl_transform_candidate,
    dtl_update_step,
    train_mlcdtl,
    transform_penalty,
    weighted_transform_update,
)
from models import DtlModel
from numerics import ActivationSpec, activation_forward, activation_inverse
from transform_core import logdet_barrier, transform_update


class TestWeightedTransformUpdate:
    def test_scalar_weighted_root(self):
        # 2 (t - 1)^2 + t^2 - log t is stationary at the positive root of 6t^2 - 4t - 1 = 0
        T = weighted_transform_update(np.array([[1.0]]), np.array([[1.0]]), 2.0, 1.0)
        assert T[0, 0] == pytest.approx((4.0 + np.sqrt(40.0)) / 12.0, abs=1e-10)

    def test_unit_weight_is_plain_update(self, rng):
        X = rng.standard_normal((5, 12))
        Z = rng.standard_normal((5, 12))
        np.testing.assert_allclose(weighted_transform_update(X, Z, 1.0, 0.3), transform_update(X, Z, 0.3, 1.0))

    def test_weighted_square_stationarity(self, rng):
        X = rng.standard_normal((6, 20))
        Z = rng.standard_normal((6, 20))
        w, eps = 3.0, 0.2
        T = weighted_transform_update(X, Z, w, eps)
        grad = 2.0 * w * (T @ X - Z) @ X.T + 2.0 * eps * T - eps * np.linalg.inv(T).T
        assert np.linalg.norm(grad) <= 1e-6 * (1.0 + np.linalg.norm(T))


def _weighted_transform_objective(T, X, U, weight, eps):
    """weight ||T X - U||^2 + eps (||T||^2 - sum log sigma_i(T))"""
    return weight * float(np.sum((T @ X - U) ** 2)) + eps * (float(np.sum(T * T)) - logdet_barrier(T))


def _lbfgs_transform(T0, X, U, weight, eps):
    m, n = T0.shape

    def fun(flat):
        T = flat.reshape(m, n)
        small = T @ T.T if m <= n else T.T @ T
        sign, logdet = np.linalg.slogdet(small)
        if sign <= 0:
            return np.inf, np.zeros_like(flat)
        value = weight * float(np.sum((T @ X - U) ** 2)) + eps * (float(np.sum(T * T)) - 0.5 * logdet)
        barrier = np.linalg.solve(small, T) if m <= n else np.linalg.solve(small, T.T).T
        grad = 2.0 * weight * (T @ X - U) @ X.T + 2.0 * eps * T - eps * barrier
        return value, grad.ravel()

    result = scipy.optimize.minimize(
        fun, T0.ravel(), jac=True, method="L-BFGS-B", options={"maxiter": 5000, "gtol": 1e-10, "ftol": 1e-15}
    )
    return result.x.reshape(m, n)


class TestDtlCandidates:
    @pytest.fixture
    def state(self, small_problem, exact_config):
        X, Y = small_problem
        return dtl_init_state(X, Y, exact_config)

    def test_label_map_normal_equations(self, state):
        M = dtl_label_map_candidate(state)
        residual = (state.Y - M @ state.Z) @ state.Z.T
        assert np.linalg.norm(residual) <= 1e-6 * (1.0 + np.linalg.norm(state.Y))

    def test_last_transform_is_core_update(self, state):
        expected = transform_update(state.blocks[-2], state.Z, state.config.eps, 1.0)
        np.testing.assert_allclose(dtl_transform_candidate(state, 2), expected)

    @pytest.mark.parametrize("j", [0, 1, 2])
    def test_transform_matches_numeric_minimizer(self, state, j):
        cfg = state.config
        inp = state.layer_input(j)
        if j < 2:
            U, weight = activation_inverse(state.blocks[j], state.activation), cfg.mu
        else:
            U, weight = state.Z, 1.0
        candidate = dtl_transform_candidate(state, j)
        numeric = _lbfgs_transform(state.transforms[j], inp, U, weight, cfg.eps)
        ours = _weighted_transform_objective(candidate, inp, U, weight, cfg.eps)
        best = _weighted_transform_objective(numeric, inp, U, weight, cfg.eps)
        assert ours <= best + 1e-6 * max(1.0, abs(best))

    def test_weighted_inner_transform_uses_mu(self, small_problem):
        X, Y = small_problem
        config = TrainConfig(layer_sizes=(8, 5), mu=4.0, eps=0.3, seed=2)
        state = dtl_init_state(X, Y, config)
        target = activation_inverse(state.blocks[0], state.activation)
        expected = weighted_transform_update(X, target, 4.0, 0.3)
        np.testing.assert_allclose(dtl_transform_candidate(state, 0), expected)
        T = expected
        grad = 8.0 * (T @ X - target) @ X.T + 0.6 * T - 0.3 * np.linalg.inv(T).T
        assert np.linalg.norm(grad) <= 1e-6 * (1.0 + np.linalg.norm(T))

    def test_code_matches_stacked_least_squares(self, state):
        lam = state.config.lam
        k = state.Z.shape[0]
        A = np.vstack([np.eye(k), np.sqrt(lam) * state.label_map])
        B = np.vstack([state.transforms[-1] @ state.blocks[-2], np.sqrt(lam) * state.Y])
        np.testing.assert_allclose(dtl_code_candidate(state), scipy.linalg.lstsq(A, B)[0], rtol=1e-6, atol=1e-9)

    def test_first_block_matches_stacked_least_squares(self, state):
        mu, phi = state.config.mu, state.activation
        T1, T2 = state.transforms[0], state.transforms[1]
        # mu ||T2 Z1 - atanh(Z2)||^2 + mu ||Z1 - tanh(T1 X)||^2
        A = np.sqrt(mu) * np.vstack([T2, np.eye(T2.shape[1])])
        B = np.sqrt(mu) * np.vstack([activation_inverse(state.blocks[1], phi), activation_forward(T1 @ state.X, phi)])
        expected = scipy.linalg.lstsq(A, B)[0]
        np.testing.assert_allclose(dtl_intermediate_candidate(state, 0), expected, rtol=1e-6, atol=1e-9)

    def test_last_block_matches_stacked_least_squares(self, state):
        mu, phi = state.config.mu, state.activation
        T2, T3 = state.transforms[1], state.transforms[2]
        # ||T3 Z2 - Z||^2 + mu ||Z2 - tanh(T2 Z1)||^2
        A = np.vstack([T3, np.sqrt(mu) * np.eye(T3.shape[1])])
        B = np.vstack([state.Z, np.sqrt(mu) * activation_forward(T2 @ state.blocks[0], phi)])
        expected = scipy.linalg.lstsq(A, B)[0]
        np.testing.assert_allclose(dtl_intermediate_candidate(state, 1), expected, rtol=1e-6, atol=1e-9)


class TestDtlUpdateStep:
    def test_each_cycle_never_raises_objective(self, small_problem, small_config):
        X, Y = small_problem
        state = dtl_init_state(X, Y, small_config)
        previous = dtl_objective(state)
        for _ in range(15):
            state = dtl_update_step(state)
            current = dtl_objective(state)
            assert current <= previous
            previous = current

    def test_strong_coupling_never_raises_objective(self, small_problem):
        X, Y = small_problem
        config = TrainConfig(layer_sizes=(6, 5, 4), mu=50.0, eps=0.01, seed=11)
        state = dtl_init_state(X, Y, config)
        previous = dtl_objective(state)
        for _ in range(10):
            state = dtl_update_step(state)
            assert dtl_objective(state) <= previous
            previous = dtl_objective(state)

    def test_objective_includes_transform_penalty(self, small_problem, small_config):
        X, Y = small_problem
        state = dtl_init_state(X, Y, small_config)
        data_terms = float(np.sum(dtl_sample_objective(state)))
        assert dtl_objective(state) == pytest.approx(data_terms + transform_penalty(state))

    def test_code_beats_perturbations(self, small_problem, exact_config, rng):
        X, Y = small_problem
        state = dtl_init_state(X, Y, exact_config)
        new = dtl_update_step(state)
        fitted = new.transforms[-1] @ state.blocks[-2]
        M, lam = new.label_map, exact_config.lam

        def sub_objective(Z):
            return float(np.sum((fitted - Z) ** 2) + lam * np.sum((Y - M @ Z) ** 2))

        best = sub_objective(new.Z)
        for _ in range(100):
            assert best <= sub_objective(new.Z + 1e-3 * rng.standard_normal(new.Z.shape))

    def test_large_penalty_pins_last_intermediate(self, small_problem):
        X, Y = small_problem
        config = TrainConfig(layer_sizes=(6, 5, 4), mu=1e6, seed=5)
        state = dtl_init_state(X, Y, config)
        new = dtl_update_step(state)
        forward = activation_forward(new.transforms[1] @ new.blocks[0])
        assert np.linalg.norm(new.blocks[1] - forward) <= 1e-3 * np.linalg.norm(forward)

    def test_single_layer_transform_matches_core(self, small_problem):
        X, Y = small_problem
        config = TrainConfig(layer_sizes=(8,), seed=1)
        state = dtl_init_state(X, Y, config)
        np.testing.assert_allclose(dtl_transform_candidate(state, 0), transform_update(X, state.Z, config.eps, 1.0))

    def test_transforms_stay_full_rank(self, small_problem, small_config):
        X, Y = small_problem
        state = dtl_init_state(X, Y, small_config)
        for _ in range(5):
            state = dtl_update_step(state)
        for T in state.transforms:
            assert np.isfinite(logdet_barrier(T))

class TestTrainMlcdtl:
    def test_model_shapes(self, small_problem, small_config):
        X, Y = small_problem
        model = train_mlcdtl(X, Y, small_config)
        assert isinstance(model, DtlModel)
        assert [T.shape for T in model.transforms] == [(6, 8), (5, 6), (4, 5)]
        assert model.label_map.shape == (3, 4)
        np.testing.assert_array_equal(model.thresholds, np.full(3, 0.5))

    def test_transforms_full_rank(self, small_problem, small_config):
        X, Y = small_problem
        model = train_mlcdtl(X, Y, small_config)
        for T in model.transforms:
            assert scipy.linalg.svdvals(T).min() > 0.0

    def test_later_iterations_improve_on_first(self, small_problem, small_config):
        X, Y = small_problem
        model = train_mlcdtl(X, Y, small_config)
        assert len(model.objective_trace) > 10
        assert model.objective_trace[10] <= model.objective_trace[1]

    @pytest.mark.parametrize("depth", [1, 2, 3, 4])
    def test_shape_chain_for_every_depth(self, small_problem, depth):
        X, Y = small_problem
        sizes = (6, 5, 4, 3)[:depth]
        model = train_mlcdtl(X, Y, TrainConfig(layer_sizes=sizes, max_iter=3))
        assert model.depth == depth
        for inner, outer in zip(model.transforms, model.transforms[1:]):
            assert inner.shape[0] == outer.shape[1]

    def test_default_layer_sizes(self, rng):
        X = rng.standard_normal((60, 130))
        Y = (rng.random((2, 130)) < 0.5).astype(float)
        model = train_mlcdtl(X, Y, TrainConfig(max_iter=1))
        assert model.config.layer_sizes == (120, 80, 40)

    def test_zero_label_weight_ignores_labels(self, small_problem, rng):
        X, Y = small_problem
        other = (rng.random(Y.shape) < 0.5).astype(float)
        config = TrainConfig(layer_sizes=(6, 5, 4), lam=0.0, max_iter=6, seed=4)
        a = train_mlcdtl(X, Y, config)
        b = train_mlcdtl(X, other, config)
        for Ta, Tb in zip(a.transforms, b.transforms):
            np.testing.assert_array_equal(Ta, Tb)

    def test_deterministic(self, small_problem, small_config):
        X, Y = small_problem
        a = train_mlcdtl(X, Y, small_config)
        b = train_mlcdtl(X, Y, small_config)
        for Ta, Tb in zip(a.factors, b.factors):
            np.testing.assert_array_equal(Ta, Tb)
        assert a.objective_trace == b.objective_trace

    def test_non_binary_labels(self, small_problem, small_config):
        X, Y = small_problem
        with pytest.raises(DataError):
            train_mlcdtl(X, Y - 0.5, small_config)


class TestDtlInference:
    @pytest.fixture
    def model(self, small_problem, small_config):
        X, Y = small_problem
        return train_mlcdtl(X, Y, small_config)

    def test_zero_input_gives_zero_code(self, model):
        np.testing.assert_array_equal(dtl_infer(np.zeros((8, 4)), model), np.zeros((4, 4)))

    def test_composition(self, model, rng):
        Xtest = rng.standard_normal((8, 6))
        T1, T2, T3 = model.transforms
        expected = T3 @ np.tanh(T2 @ np.tanh(T1 @ Xtest))
        np.testing.assert_allclose(dtl_infer(Xtest, model), expected, rtol=1e-12, atol=1e-12)

    def test_repeatable(self, model, rng):
        Xtest = rng.standard_normal((8, 6))
        np.testing.assert_array_equal(dtl_infer(Xtest, model), dtl_infer(Xtest, model))

    def test_dimension_mismatch(self, model):
        with pytest.raises(DimensionError):
            dtl_infer(np.zeros((5, 2)), model)

    def test_predict_uses_thresholds(self, model, rng):
        Xtest = rng.standard_normal((8, 6))
        scores, labels = dtl_predict(Xtest, model)
        np.testing.assert_array_equal(labels, (scores >= 0.5).astype(float))
        at_threshold = model.with_thresholds(scores[:, 0])
        _, labels = dtl_predict(Xtest, at_threshold)
        np.testing.assert_array_equal(labels[:, 0], np.ones(3))


class TestPredictionCost:
    @pytest.mark.slow
    def test_prediction_cost_is_linear(self, rng):
        sizes = [(120, 60), (80, 120), (40, 80)]
        model = DtlModel(
            factors=tuple(rng.standard_normal(shape) / np.sqrt(shape[1]) for shape in sizes),
            label_map=rng.standard_normal((4, 40)),
            thresholds=np.full(4, 0.5),
            activation=ActivationSpec(),
            config=TrainConfig(layer_sizes=(120, 80, 40)),
        )

        def median_time(n):
            Xtest = rng.standard_normal((60, n))
            timings = []
            for _ in range(7):
                start = time.perf_counter()
                dtl_predict(Xtest, model)
                timings.append(time.perf_counter() - start)
            return float(np.median(timings))

        assert median_time(10_000) <= 15.0 * median_time(1_000)


@pytest.mark.slow
class TestDtlConvergence:
    @pytest.mark.parametrize("seed", range(5))
    def test_descends_and_converges_within_budget(self, seed):
        ds, _ = synth_dataset(3, 300, d=20, seed=seed)
        X, _, _ = standardize_features(ds.X, center=False)
        config = TrainConfig(layer_sizes=(16, 12, 8), max_iter=200, tol=1e-4, seed=seed)
        model = train_mlcdtl(X, ds.Y, config)
        trace = np.asarray(model.objective_trace)
        slack = 1e-9 * np.maximum(1.0, np.abs(trace[:-1]))
        assert np.all(np.diff(trace) <= slack)
        assert len(trace) - 1 < config.max_iter
