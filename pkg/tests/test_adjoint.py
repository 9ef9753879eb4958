"""Costate gradients against hand-derived and finite-difference oracles,
plus the reduction identities between parametrizations."""

import numpy as np
import pytest

from depthflow import depth as dp
from depthflow import nn
from depthflow.adjoint import (
    LossSpec,
    adaptive_depth_grad,
    adjoint_gradient,
    custom_adjoint_gradient,
    depth_bound_grad,
    forward_loss,
    generalized_adjoint_grad,
    spectral_adjoint_grad,
    stacked_adjoint_grad,
)
from depthflow.models import AugmentationStrategy, DepthHypernet, NodeModel

TOL = dict(rtol=1e-10, atol=1e-10)


def scalar_model(theta_vals=(0.0, 1.0)):
    """dz/ds = w z + b via a single linear layer; default integrates b."""
    spec = nn.FieldSpec.mlp([1, 1])
    theta = dp.Constant(nn.params_from_values(spec, np.array(theta_vals, dtype=np.float64)))
    return NodeModel(
        field_spec=spec, theta=theta, hx=AugmentationStrategy("none"), n_z=1, depth_span=1.0
    )


def running_sq():
    return LossSpec.running_only(
        lambda s, z: float(np.sum(z * z)), lambda s, z: 2.0 * z
    )


class TestAnalyticOracle:
    def test_quadratic_running_loss(self):
        # dz/ds = theta, z0 = 0, l = z^2 over [0,1]:
        # z(s) = theta s, loss = theta^2/3, dloss/dtheta = 2 theta / 3
        for th in (1.0, -0.6, 2.5):
            model = scalar_model((0.0, th))
            r = adjoint_gradient(model, np.array([[0.0]]), running_sq(), **TOL)
            assert r.loss == pytest.approx(th**2 / 3, abs=1e-9)
            assert r.grad[1] == pytest.approx(2 * th / 3, abs=1e-6)

    def test_weight_entry_too(self):
        # dL/dw = int a z dz/dw ... checked against finite differences
        model = scalar_model((0.0, 1.0))
        r = adjoint_gradient(model, np.array([[0.0]]), running_sq(), **TOL)
        assert r.grad[0] == pytest.approx(0.25, abs=1e-6)  # hand-derived


class TestFdOracles:
    @pytest.mark.parametrize("mode", ["autonomous", "depth-concat", "data-controlled"])
    def test_terminal_loss(self, mode):
        n_z = 2
        extra = {"autonomous": 0, "depth-concat": 1, "data-controlled": 2}[mode]
        spec = nn.FieldSpec.mlp([n_z + extra, 5, n_z], input_mode=mode)
        model = NodeModel(
            field_spec=spec,
            theta=dp.Constant(nn.init_params(spec, 3)),
            hx=AugmentationStrategy("none"),
            n_z=n_z,
            depth_span=1.0,
        )
        x = np.array([[0.4, -0.3], [-0.8, 0.1]])
        loss = LossSpec.terminal_only(
            lambda z: float(np.sum(z**2)), lambda z: 2.0 * z
        )
        r = adjoint_gradient(model, x, loss, **TOL)
        c = dp.param_coefficients(model.theta)
        for i in (0, 4, c.size - 1):
            h = 1e-6
            c[i] += h
            dp.set_param_coefficients(model.theta, c)
            up, _ = forward_loss(model, x, loss, **TOL)
            c[i] -= 2 * h
            dp.set_param_coefficients(model.theta, c)
            dn, _ = forward_loss(model, x, loss, **TOL)
            c[i] += h
            dp.set_param_coefficients(model.theta, c)
            assert r.grad[i] == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-8)

    def test_grad_z0_matches_fd(self):
        model = scalar_model((0.5, 0.3))
        loss = LossSpec.terminal_only(lambda z: float(np.sum(z**2)), lambda z: 2.0 * z)
        x = np.array([[0.7]])
        r = adjoint_gradient(model, x, loss, **TOL)
        h = 1e-6
        up, _ = forward_loss(model, x + h, loss, **TOL)
        dn, _ = forward_loss(model, x - h, loss, **TOL)
        assert r.grad_z0[0, 0] == pytest.approx((up - dn) / (2 * h), rel=1e-6)


class TestReductionIdentities:
    def setup_method(self):
        self.spec = nn.FieldSpec.mlp([2, 4, 2])
        self.base = nn.init_params(self.spec, 11)
        self.x = np.array([[0.3, -0.5]])
        self.loss = LossSpec.terminal_only(
            lambda z: float(np.sum(z**2)), lambda z: 2.0 * z
        )

    def _model(self, theta):
        return NodeModel(
            field_spec=self.spec, theta=theta, hx=AugmentationStrategy("none"),
            n_z=2, depth_span=1.0,
        )

    def test_constant_equals_single_basis_galerkin(self):
        g_const = generalized_adjoint_grad(
            self._model(dp.Constant(self.base)), self.x, self.loss, **TOL
        ).grad
        basis = dp.BasisSet("polynomial", 1, 1.0)  # the constant function
        gal = dp.Galerkin(basis=basis, alpha=self.base.values[None, :], layout=self.base.layout)
        g_gal = spectral_adjoint_grad(self._model(gal), self.x, self.loss, **TOL).grad
        np.testing.assert_allclose(g_gal[0], g_const, atol=1e-8)

    def test_constant_equals_single_segment_stacked(self):
        g_const = generalized_adjoint_grad(
            self._model(dp.Constant(self.base)), self.x, self.loss, **TOL
        ).grad
        stack = dp.Stacked(grid=np.array([0.0, 1.0]), thetas=[self.base])
        g_stack = stacked_adjoint_grad(self._model(stack), self.x, self.loss, **TOL).grad
        np.testing.assert_allclose(g_stack[0], g_const, atol=1e-8)

    def test_equal_segments_sum_to_constant_grad(self):
        g_const = generalized_adjoint_grad(
            self._model(dp.Constant(self.base)), self.x, self.loss, **TOL
        ).grad
        stack = dp.Stacked(
            grid=np.array([0.0, 0.4, 1.0]), thetas=[self.base.copy(), self.base.copy()]
        )
        g_stack = stacked_adjoint_grad(self._model(stack), self.x, self.loss, **TOL).grad
        np.testing.assert_allclose(g_stack.sum(axis=0), g_const, atol=1e-7)

    def test_wrapper_type_checks(self):
        with pytest.raises(TypeError):
            spectral_adjoint_grad(self._model(dp.Constant(self.base)), self.x, self.loss)
        with pytest.raises(TypeError):
            stacked_adjoint_grad(self._model(dp.Constant(self.base)), self.x, self.loss)
        with pytest.raises(TypeError):
            gal = dp.Galerkin(
                basis=dp.BasisSet("polynomial", 1, 1.0),
                alpha=self.base.values[None, :], layout=self.base.layout,
            )
            generalized_adjoint_grad(self._model(gal), self.x, self.loss)


class TestLinearity:
    def test_gradient_is_linear_in_the_loss(self):
        model = scalar_model((0.4, 0.8))
        x = np.array([[0.5]])
        l1 = LossSpec.terminal_only(lambda z: float(np.sum(z**2)), lambda z: 2.0 * z)
        l2 = running_sq()
        g1 = adjoint_gradient(model, x, l1, **TOL).grad
        g2 = adjoint_gradient(model, x, l2, **TOL).grad
        combo = LossSpec(
            terminal=lambda z, th: 2.0 * float(np.sum(z**2)),
            terminal_grad=lambda z, th: 4.0 * z,
            running=lambda s, z, th: 3.0 * float(np.sum(z * z)),
            running_grad=lambda s, z, th: 6.0 * z,
        )
        g = adjoint_gradient(model, x, combo, **TOL).grad
        np.testing.assert_allclose(g, 2 * g1 + 3 * g2, atol=1e-8)


class TestThetaDependentLoss:
    def test_fd_oracle(self):
        model = scalar_model((0.2, 0.7))
        x = np.array([[0.3]])
        tgt = 0.5
        loss = LossSpec(
            terminal=lambda z, th: float(np.sum((z - tgt) ** 2) + 0.1 * np.sum(th**2)),
            terminal_grad=lambda z, th: 2.0 * (z - tgt),
            terminal_grad_theta=lambda z, th: 0.2 * th,
            running=lambda s, z, th: float(0.05 * np.sum(th**2)),
            running_grad=lambda s, z, th: np.zeros_like(z),
            running_grad_theta=lambda s, z, th: 0.1 * th,
        )
        r = adjoint_gradient(model, x, loss, **TOL)
        c = dp.param_coefficients(model.theta)
        for i in range(c.size):
            h = 1e-6
            c[i] += h
            dp.set_param_coefficients(model.theta, c)
            up, _ = forward_loss(model, x, loss, **TOL)
            c[i] -= 2 * h
            dp.set_param_coefficients(model.theta, c)
            dn, _ = forward_loss(model, x, loss, **TOL)
            c[i] += h
            dp.set_param_coefficients(model.theta, c)
            assert r.grad[i] == pytest.approx((up - dn) / (2 * h), rel=1e-5, abs=1e-8)


class TestDepthBound:
    def test_matches_fd_in_the_bound(self):
        model = scalar_model((0.5, 0.9))
        x = np.array([[0.4]])
        loss = LossSpec.terminal_only(lambda z: float(np.sum(z**2)), lambda z: 2.0 * z)
        dS = depth_bound_grad(model, x, loss, **TOL)
        h = 1e-6
        up, _ = forward_loss(model, x, loss, span=(0.0, 1.0 + h), **TOL)
        dn, _ = forward_loss(model, x, loss, span=(0.0, 1.0 - h), **TOL)
        assert dS == pytest.approx((up - dn) / (2 * h), rel=1e-6)

    def test_running_term_contributes(self):
        model = scalar_model((0.0, 1.0))
        x = np.array([[0.0]])
        dS = depth_bound_grad(model, x, running_sq(), **TOL)
        h = 1e-6
        up, _ = forward_loss(model, x, running_sq(), span=(0.0, 1.0 + h), **TOL)
        dn, _ = forward_loss(model, x, running_sq(), span=(0.0, 1.0 - h), **TOL)
        assert dS == pytest.approx((up - dn) / (2 * h), rel=1e-6)


class TestAdaptiveDepth:
    def _model(self):
        model = scalar_model((0.3, 0.6))
        model.depth_hypernet = DepthHypernet.init(1, 4, seed=5)
        return model

    def test_hypernet_gradient_matches_fd(self):
        model = self._model()
        x = np.array([0.7])
        loss = LossSpec.terminal_only(lambda z: float(np.sum(z**2)), lambda z: 2.0 * z)
        r = adaptive_depth_grad(model, x, loss, **TOL)
        vals = model.depth_hypernet.param_values()
        for i in (0, 2, vals.size - 1):
            h = 1e-6
            vals[i] += h
            model.depth_hypernet.set_param_values(vals)
            up, _ = forward_loss(model, x[None, :], loss, span=(0.0, model.span_for(x)), **TOL)
            vals[i] -= 2 * h
            model.depth_hypernet.set_param_values(vals)
            dn, _ = forward_loss(model, x[None, :], loss, span=(0.0, model.span_for(x)), **TOL)
            vals[i] += h
            model.depth_hypernet.set_param_values(vals)
            assert r.grad_hypernet[i] == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-9)

    def test_batch_rejected(self):
        model = self._model()
        loss = LossSpec.terminal_only(lambda z: float(np.sum(z**2)), lambda z: 2.0 * z)
        with pytest.raises(ValueError):
            adaptive_depth_grad(model, np.array([[0.7], [0.2]]), loss)


class TestCustomField:
    def test_linear_field_gradient(self):
        # dz/ds = theta * z with explicit vjp wiring; dL/dtheta for
        # L = z(1)^2 is 2 z0^2 e^{2 theta}
        theta = np.array([0.3])

        class Field:
            k, n_z, grad_dim = 1, 1, 1

            def theta_values(self, s):
                return theta

            def theta_chain(self, s, v):
                return v

            def value(self, s, Z):
                return theta[0] * Z.reshape(1, 1)

            def value_vjp(self, s, Z, A):
                Z = Z.reshape(1, 1)
                A = A.reshape(1, 1)
                return theta[0] * Z, theta[0] * A, np.array([float(A[0, 0] * Z[0, 0])])

        z0 = np.array([[0.8]])
        loss = LossSpec.terminal_only(lambda z: float(np.sum(z**2)), lambda z: 2.0 * z)
        r = custom_adjoint_gradient(Field(), z0, loss, (0.0, 1.0), 1e-10, 1e-10)
        want = 2 * 0.8**2 * np.exp(2 * theta[0])
        assert r.grad[0] == pytest.approx(want, rel=1e-7)
        assert r.loss == pytest.approx(0.8**2 * np.exp(2 * theta[0]), rel=1e-8)
