"""Unit tests for the hand-written network: forward, VJP, JVP, and the
forward-over-reverse pass, all checked against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthflow import nn


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestActivations:
    @pytest.mark.parametrize("name", nn.ACTIVATIONS)
    def test_derivative_matches_fd(self, name):
        xs = np.linspace(-2.0, 2.0, 12)  # grid avoids the relu/elu kink at 0
        fd = (nn._act(name, xs + 1e-6) - nn._act(name, xs - 1e-6)) / 2e-6
        np.testing.assert_allclose(nn._act_prime(name, xs), fd, atol=1e-8)

    @pytest.mark.parametrize("name", nn.ACTIVATIONS)
    def test_second_derivative_matches_fd(self, name):
        xs = np.linspace(-2.0, 2.0, 12)
        fd = (nn._act_prime(name, xs + 1e-6) - nn._act_prime(name, xs - 1e-6)) / 2e-6
        np.testing.assert_allclose(nn._act_second(name, xs), fd, atol=1e-7)

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            nn.FieldSpec.mlp([2, 3, 2], hidden="swish")


class TestFieldSpec:
    def test_dims(self):
        spec = nn.FieldSpec.mlp([3, 8, 2])
        assert spec.input_dim == 3
        assert spec.output_dim == 2
        assert spec.n_layers == 2

    def test_activation_per_layer(self):
        spec = nn.FieldSpec.mlp([2, 4, 4, 1], hidden="relu", final="tanh")
        assert spec.activations == ("relu", "relu", "tanh")

    def test_too_few_widths(self):
        with pytest.raises(ValueError):
            nn.FieldSpec.mlp([3])


class TestInitParams:
    def test_bounds_and_zero_bias(self):
        spec = nn.FieldSpec.mlp([4, 16, 2])
        p = nn.init_params(spec, seed=0)
        w0 = p.weight(0)
        assert np.all(np.abs(w0) <= 1.0 / np.sqrt(4))
        assert np.all(p.bias(0) == 0.0)
        assert np.all(p.bias(1) == 0.0)

    def test_seeded_reproducibility(self):
        spec = nn.FieldSpec.mlp([4, 16, 2])
        a = nn.init_params(spec, seed=7)
        b = nn.init_params(spec, seed=7)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, nn.init_params(spec, seed=8).values)


class TestForward:
    def test_identity_single_layer(self):
        spec = nn.FieldSpec.mlp([2, 2])
        p = nn.params_from_values(spec, np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
        x = np.array([0.3, -0.7])
        np.testing.assert_allclose(nn.mlp_forward(spec, p, x), x)

    def test_batch_matches_loop(self):
        spec = nn.FieldSpec.mlp([3, 5, 2])
        p = nn.init_params(spec, seed=1)
        xb = np.random.default_rng(0).normal(size=(6, 3))
        batch = nn.mlp_forward(spec, p, xb)
        for i, xi in enumerate(xb):
            np.testing.assert_allclose(batch[i], nn.mlp_forward(spec, p, xi))

    def test_wrong_input_dim(self):
        spec = nn.FieldSpec.mlp([3, 5, 2])
        p = nn.init_params(spec, seed=1)
        with pytest.raises(nn.ShapeError):
            nn.mlp_forward(spec, p, np.zeros(4))


class TestVjp:
    def setup_method(self):
        self.spec = nn.FieldSpec.mlp([3, 6, 2], hidden="tanh")
        self.p = nn.init_params(self.spec, seed=3)
        rng = np.random.default_rng(5)
        self.x = rng.normal(size=(4, 3))
        self.cot = rng.normal(size=(4, 2))

    def test_param_grad_matches_fd(self):
        _, g_params = nn.mlp_vjp(self.spec, self.p, self.x, self.cot)

        def scalar(vals):
            out = nn.mlp_forward(self.spec, nn.params_from_values(self.spec, vals), self.x)
            return float(np.sum(out * self.cot))

        np.testing.assert_allclose(g_params, fd_grad(scalar, self.p.values), atol=1e-7)

    def test_input_grad_matches_fd(self):
        g_in, _ = nn.mlp_vjp(self.spec, self.p, self.x, self.cot)

        def scalar(xf):
            out = nn.mlp_forward(self.spec, self.p, xf.reshape(self.x.shape))
            return float(np.sum(out * self.cot))

        np.testing.assert_allclose(
            g_in.ravel(), fd_grad(scalar, self.x.ravel()), atol=1e-7
        )


class TestJvp:
    def test_matches_fd_directional(self):
        spec = nn.FieldSpec.mlp([2, 5, 2], hidden="softplus")
        p = nn.init_params(spec, seed=2)
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 2))
        t = rng.normal(size=(3, 2))
        _, jvp = nn.mlp_jvp(spec, p, x, t)
        h = 1e-6
        fd = (nn.mlp_forward(spec, p, x + h * t) - nn.mlp_forward(spec, p, x - h * t)) / (2 * h)
        np.testing.assert_allclose(jvp, fd, atol=1e-7)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_jvp_vjp_duality(self, seed):
        # <cot, df/dx t> == <vjp(cot)_x, t> for any cot, t
        spec = nn.FieldSpec.mlp([2, 4, 2])
        p = nn.init_params(spec, seed=seed)
        rng = np.random.default_rng(seed + 1)
        x = rng.normal(size=(2, 2))
        t = rng.normal(size=(2, 2))
        cot = rng.normal(size=(2, 2))
        _, jvp = nn.mlp_jvp(spec, p, x, t)
        g_in, _ = nn.mlp_vjp(spec, p, x, cot)
        assert np.sum(cot * jvp) == pytest.approx(np.sum(g_in * t), rel=1e-10, abs=1e-12)


class TestJvpVjp:
    def test_matches_fd_of_directional_derivative(self):
        spec = nn.FieldSpec.mlp([2, 5, 1], hidden="tanh")
        p = nn.init_params(spec, seed=4)
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 2))
        t = rng.normal(size=(3, 2))
        cot_v = rng.normal(size=(3, 1))
        cot_j = rng.normal(size=(3, 1))
        _, _, g_params = nn.mlp_jvp_vjp(spec, p, x, t, cot_v, cot_j)

        def scalar(vals):
            pv = nn.params_from_values(spec, vals)
            f, jvp = nn.mlp_jvp(spec, pv, x, t)
            return float(np.sum(f * cot_v) + np.sum(jvp * cot_j))

        np.testing.assert_allclose(g_params, fd_grad(scalar, p.values), atol=1e-6)

    def test_tangent_grad_matches_fd(self):
        spec = nn.FieldSpec.mlp([2, 4, 1])
        p = nn.init_params(spec, seed=6)
        rng = np.random.default_rng(13)
        x = rng.normal(size=(2, 2))
        t = rng.normal(size=(2, 2))
        cot_j = rng.normal(size=(2, 1))
        _, g_t, _ = nn.mlp_jvp_vjp(spec, p, x, t, None, cot_j)

        def scalar(tf):
            _, jvp = nn.mlp_jvp(spec, p, x, tf.reshape(t.shape))
            return float(np.sum(jvp * cot_j))

        np.testing.assert_allclose(g_t.ravel(), fd_grad(scalar, t.ravel()), atol=1e-7)
