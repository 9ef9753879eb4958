"""Optimizers, loss functions, regularizers, and loop behavior."""

import numpy as np
import pytest

from depthflow import depth as dp
from depthflow import nn
from depthflow.adjoint import LossSpec, adjoint_gradient, custom_adjoint_gradient
from depthflow.data import make_dataset
from depthflow.models import AugmentationStrategy, Cnf1d, NodeModel, wrap_field
from depthflow.train import (
    OptimizerState,
    TrainConfig,
    loss_eval,
    optimizer_step,
    regularizer_eval,
    regularizer_loss,
    train_cnf,
    train_loop,
)


class TestOptimizer:
    def test_zero_grad_no_decay_is_identity(self):
        st = OptimizerState(lr=0.1)
        p = {"w": np.array([1.0, -2.0])}
        out = optimizer_step(st, p, {"w": np.zeros(2)})
        np.testing.assert_array_equal(out["w"], p["w"])

    def test_adam_first_step_formula(self):
        st = OptimizerState(lr=1e-3)
        out = optimizer_step(st, {"w": np.array([0.0])}, {"w": np.array([1.0])})
        assert out["w"][0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-12)

    def test_adamw_decoupled_decay(self):
        st = OptimizerState(kind="adamw", lr=1e-3, weight_decay=0.1)
        out = optimizer_step(st, {"w": np.array([1.0])}, {"w": np.array([0.0])})
        assert out["w"][0] == pytest.approx(0.9999, abs=1e-12)

    def test_adam_coupled_decay_acts_as_gradient(self):
        st = OptimizerState(kind="adam", lr=1e-3, weight_decay=0.5)
        out = optimizer_step(st, {"w": np.array([1.0])}, {"w": np.array([0.0])})
        assert out["w"][0] < 1.0  # wd*param enters the moment estimates

    def test_shape_mismatch(self):
        st = OptimizerState()
        with pytest.raises(nn.ShapeError):
            optimizer_step(st, {"w": np.zeros(3)}, {"w": np.zeros(2)})

    def test_deterministic(self):
        g = {"w": np.array([0.3, -0.7])}
        outs = []
        for _ in range(2):
            st = OptimizerState(lr=0.01)
            p = {"w": np.array([1.0, 2.0])}
            for _ in range(5):
                p = optimizer_step(st, p, g)
            outs.append(p["w"])
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            OptimizerState(kind="sgd")


class TestLossEval:
    def test_identical_is_zero(self):
        v, g = loss_eval("mse", np.ones(4), np.ones(4))
        assert v == 0.0
        np.testing.assert_array_equal(g, np.zeros(4))

    def test_mse_example(self):
        v, g = loss_eval("mse", np.array([0.0]), np.array([2.0]))
        assert v == 4.0
        assert g[0] == -4.0

    def test_l1_example(self):
        v, _ = loss_eval("l1", np.array([1.0, -1.0]), np.array([0.0, 0.0]))
        assert v == 1.0

    def test_l1_tie_subgradient_zero(self):
        _, g = loss_eval("l1", np.array([0.5, 1.0]), np.array([0.5, 0.0]))
        assert g[0] == 0.0

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(3)
        p, t = rng.normal(size=6), rng.normal(size=6)
        for kind in ("mse", "l1"):
            _, g = loss_eval(kind, p, t)
            for i in range(6):
                e = np.zeros(6)
                e[i] = 1e-7
                fd = (loss_eval(kind, p + e, t)[0] - loss_eval(kind, p - e, t)[0]) / 2e-7
                assert g[i] == pytest.approx(fd, abs=1e-8)

    def test_length_mismatch(self):
        with pytest.raises(nn.ShapeError):
            loss_eval("mse", np.zeros(3), np.zeros(4))


def unit_field_model():
    """dz/ds = 1 exactly (single linear layer, zero weight, unit bias)."""
    spec = nn.FieldSpec.mlp([1, 1])
    params = nn.params_from_values(spec, np.array([0.0, 1.0]))
    return NodeModel(field_spec=spec, theta=dp.Constant(params),
                     hx=AugmentationStrategy("none"), n_z=1, depth_span=1.0)


class TestRegularizers:
    def test_zero_field_both_zero(self):
        spec = nn.FieldSpec.mlp([1, 1])
        model = NodeModel(field_spec=spec, theta=dp.Constant(nn.zero_params(spec)),
                          hx=AugmentationStrategy("none"), n_z=1, depth_span=1.0)
        x = np.array([[0.5]])
        assert regularizer_eval("integral-kinetic", model, x) == pytest.approx(0.0, abs=1e-12)
        assert regularizer_eval("terminal-fixed-point", model, x) == pytest.approx(0.0, abs=1e-12)

    def test_unit_field_integral_is_one(self):
        assert regularizer_eval(
            "integral-kinetic", unit_field_model(), np.array([[0.0]])
        ) == pytest.approx(1.0, abs=1e-8)

    def test_contraction_terminal_small(self):
        # dz/ds = -z: after a long span the field norm at the end is tiny
        spec = nn.FieldSpec.mlp([1, 1])
        params = nn.params_from_values(spec, np.array([-1.0, 0.0]))
        model = NodeModel(field_spec=spec, theta=dp.Constant(params),
                          hx=AugmentationStrategy("none"), n_z=1, depth_span=8.0)
        val = regularizer_eval("terminal-fixed-point", model, np.array([[1.0]]))
        assert val < 1e-3

    def test_adjoint_vs_state_augmentation(self):
        # same regularizer gradient through two routes: the running-loss
        # costate path, and an explicit quadrature state with terminal loss
        spec = nn.FieldSpec.mlp([2, 5, 2])
        model = NodeModel(field_spec=spec, theta=dp.Constant(nn.init_params(spec, 8)),
                          hx=AugmentationStrategy("none"), n_z=2, depth_span=1.0)
        x = np.array([[0.4, -0.3], [0.1, 0.8]])
        lam = 0.7
        field = wrap_field(model, x)
        direct = adjoint_gradient(model, x, regularizer_loss("integral-kinetic", lam, field),
                                  1e-10, 1e-10)

        class Augmented:
            k, n_z, grad_dim = field.k, field.n_z + 1, field.grad_dim

            def theta_values(self, s):
                return field.theta_values(s)

            def theta_chain(self, s, v):
                return field.theta_chain(s, v)

            def _split(self, Z):
                Z = Z.reshape(self.k, self.n_z)
                return Z[:, :-1], Z[:, -1:]

            def value(self, s, Z):
                z, _ = self._split(Z)
                f = field.value(s, z)
                norms = np.sqrt(np.sum(f * f, axis=1, keepdims=True))
                return np.concatenate([f, lam / self.k * norms], axis=1)

            def value_vjp(self, s, Z, A):
                z, _ = self._split(Z)
                A = A.reshape(self.k, self.n_z)
                a_z, a_q = A[:, :-1], A[:, -1:]
                f = field.value(s, z)
                norms = np.maximum(np.sqrt(np.sum(f * f, axis=1, keepdims=True)), 1e-12)
                cot = a_z + a_q * (lam / self.k) * f / norms
                dz, A_state, g = field.value_vjp(s, z, cot)
                norms2 = np.sqrt(np.sum(dz * dz, axis=1, keepdims=True))
                dZ = np.concatenate([dz, lam / self.k * norms2], axis=1)
                return dZ, np.concatenate([A_state, np.zeros((self.k, 1))], axis=1), g

        z0 = np.concatenate([x, np.zeros((2, 1))], axis=1)
        loss = LossSpec.terminal_only(
            lambda Z: float(np.sum(Z[:, -1])),
            lambda Z: np.concatenate([np.zeros((Z.shape[0], Z.shape[1] - 1)), np.ones((Z.shape[0], 1))], axis=1),
        )
        aug = custom_adjoint_gradient(Augmented(), z0, loss, (0.0, 1.0), 1e-10, 1e-10)
        assert aug.loss == pytest.approx(direct.loss, abs=1e-6)
        np.testing.assert_allclose(aug.grad, np.asarray(direct.grad).ravel(), atol=1e-6)


def tiny_dataset(n=12):
    return make_dataset("crossing", n)


def tiny_model(seed=0, mode="autonomous"):
    extra = {"autonomous": 0, "data-controlled": 1}[mode]
    spec = nn.FieldSpec.mlp([1 + extra, 6, 1], input_mode=mode)
    return NodeModel(field_spec=spec, theta=dp.Constant(nn.init_params(spec, seed)),
                     hx=AugmentationStrategy("none"), n_z=1, depth_span=1.0)


class TestTrainLoop:
    def test_zero_epochs_no_change(self):
        model = tiny_model()
        before = dp.param_coefficients(model.theta).copy()
        _, hist = train_loop(model, tiny_dataset(), TrainConfig(epochs=0))
        assert hist.loss == []
        np.testing.assert_array_equal(dp.param_coefficients(model.theta), before)

    def test_zero_lr_no_change(self):
        model = tiny_model()
        before = dp.param_coefficients(model.theta).copy()
        _, hist = train_loop(model, tiny_dataset(), TrainConfig(epochs=3, lr=0.0))
        np.testing.assert_array_equal(dp.param_coefficients(model.theta), before)
        assert len(set(np.round(hist.loss, 12))) == 1

    def test_loss_decreases_data_controlled_scalar(self):
        model = tiny_model(mode="data-controlled")
        _, hist = train_loop(model, tiny_dataset(), TrainConfig(epochs=10, lr=5e-3))
        assert all(b <= a + 1e-9 for a, b in zip(hist.loss, hist.loss[1:]))

    def test_empty_dataset_rejected(self):
        from depthflow.data import Dataset

        ds = Dataset("crossing", np.zeros((0, 1)), np.zeros((0, 1)))
        with pytest.raises(ValueError):
            train_loop(tiny_model(), ds, TrainConfig(epochs=1))

    def test_history_records_nfe(self):
        _, hist = train_loop(tiny_model(), tiny_dataset(), TrainConfig(epochs=2))
        assert len(hist.nfe) == 2
        assert all(n > 0 for n in hist.nfe)

    def test_schedule_shrinks_lr(self):
        cfg = TrainConfig(epochs=1, schedule_gamma=0.5, schedule_every=1)
        assert cfg.schedule_gamma == 0.5
        with pytest.raises(ValueError):
            TrainConfig(schedule_gamma=1.5)


class TestCnfTraining:
    def test_loss_decreases(self):
        spec = nn.FieldSpec.mlp([2, 16, 1], hidden="softplus")
        cnf = Cnf1d(spec=spec, params=nn.init_params(spec, 0),
                    priors=[(-1.0, 0.3), (1.0, 0.3)], depth_span=1.0)
        cfg = TrainConfig(epochs=8, lr=5e-3, optimizer="adamw", rtol=1e-6, atol=1e-6)
        _, hist = train_cnf(cnf, [(1.0, 0.3), (-1.0, 0.3)], cfg, batch_size=32)
        assert hist.loss[-1] < hist.loss[0]
