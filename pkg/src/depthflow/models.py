"""Model variants built around the continuous-depth state equation.

A NodeModel bundles an input map (augmentation strategy), a vector-field
network with a depth parametrization, an optional linear output map, and a
depth span (fixed or produced per input by a small hypernetwork).  The
DepthField wrapper realizes the wiring for each variant (plain, depth input
appended, input-conditioned, higher order, selective higher order) together
with the vector-Jacobian products the costate sweep needs.

Also here: the 1-D input-conditioned continuous flow used for conditional
density modelling, with exact Jacobian sensitivities.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import depth as dp
from . import nn
from .solve import IvpProblem, Solution, dopri5_integrate

AUGMENTATION_KINDS = (
    "none",
    "zero",
    "input-layer",
    "input-layer-preserving",
    "higher-order",
    "selective-higher-order",
)


@dataclass
class AugmentationStrategy:
    """How the raw input becomes the initial state.

    - none: state is the input.
    - zero: append n_a zeros.
    - input-layer: learned linear map to the full state.
    - input-layer-preserving: keep the input, append a learned linear map
      of it for the extra dimensions.
    - higher-order: order-n lifting; positions get the input (optionally
      through a learned linear map), all derivatives start at zero.
    - selective-higher-order: second-order dynamics on the first n_a
      states only; those start at zero and the free block carries the
      input.
    """

    kind: str
    n_a: int = 0
    order: int = 1
    weight: np.ndarray | None = None  # input-layer map (rows = target dims)
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in AUGMENTATION_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if self.kind == "higher-order" and self.order < 2:
            raise ValueError("higher-order augmentation needs order >= 2")
        if self.weight is not None:
            self.weight = np.asarray(self.weight, dtype=np.float64)
            if self.bias is None:
                self.bias = np.zeros(self.weight.shape[0])
            self.bias = np.asarray(self.bias, dtype=np.float64)

    @property
    def has_params(self) -> bool:
        return self.weight is not None

    def param_values(self) -> np.ndarray:
        if not self.has_params:
            return np.zeros(0)
        return np.concatenate([self.weight.ravel(), self.bias])

    def set_param_values(self, values: np.ndarray) -> None:
        if not self.has_params:
            return
        nw = self.weight.size
        self.weight[:] = values[:nw].reshape(self.weight.shape)
        self.bias[:] = values[nw:]


def apply_hx(strategy: AugmentationStrategy, x: np.ndarray) -> np.ndarray:
    """Initial state z(0) for a single input or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    k, n_x = xb.shape
    kind = strategy.kind
    if kind == "none":
        z0 = xb
    elif kind == "zero":
        z0 = np.concatenate([xb, np.zeros((k, strategy.n_a))], axis=1)
    elif kind == "input-layer":
        _check_linear(strategy, n_x)
        z0 = xb @ strategy.weight.T + strategy.bias
    elif kind == "input-layer-preserving":
        _check_linear(strategy, n_x)
        z0 = np.concatenate([xb, xb @ strategy.weight.T + strategy.bias], axis=1)
    elif kind == "higher-order":
        if strategy.has_params:
            _check_linear(strategy, n_x)
            pos = xb @ strategy.weight.T + strategy.bias
        else:
            pos = xb
        # velocities and higher derivatives start at zero
        z0 = np.concatenate([pos] + [np.zeros_like(pos)] * (strategy.order - 1), axis=1)
    else:  # selective-higher-order: [q, p, free]; q and p are the augmentation
        z0 = np.concatenate([np.zeros((k, strategy.n_a)), xb], axis=1)
    return z0[0] if single else z0


def _check_linear(strategy: AugmentationStrategy, n_x: int) -> None:
    if strategy.weight is None:
        raise nn.ShapeError(f"{strategy.kind} augmentation needs a linear map")
    if strategy.weight.shape[1] != n_x:
        raise nn.ShapeError(
            f"input-layer map expects {strategy.weight.shape[1]} inputs, got {n_x}"
        )


def hx_grad(strategy: AugmentationStrategy, x: np.ndarray, a0: np.ndarray) -> np.ndarray:
    """Gradient of the loss w.r.t. the input-layer parameters.

    `a0` is the costate at depth 0 (the loss sensitivity to the initial
    state), batched (k, n_z).
    """
    if not strategy.has_params:
        return np.zeros(0)
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    a0 = np.atleast_2d(a0)
    rows = strategy.weight.shape[0]
    if strategy.kind == "input-layer":
        cot = a0[:, :rows]
    elif strategy.kind == "input-layer-preserving":
        cot = a0[:, xb.shape[1] : xb.shape[1] + rows]
    elif strategy.kind == "higher-order":
        cot = a0[:, :rows]
    else:
        return np.zeros(0)
    return np.concatenate([(cot.T @ xb).ravel(), cot.sum(axis=0)])


@dataclass
class DepthHypernet:
    """Per-input integration depth g(x) = |1 + w_o . relu(W_i x + b_i) + b_o|."""

    w_in: np.ndarray  # (hidden, n_x)
    b_in: np.ndarray  # (hidden,)
    w_out: np.ndarray  # (hidden,)
    b_out: float

    def __post_init__(self):
        self.w_in = np.asarray(self.w_in, dtype=np.float64)
        self.b_in = np.asarray(self.b_in, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.b_out = float(self.b_out)

    @classmethod
    def init(cls, n_x: int, hidden: int, seed: int) -> "DepthHypernet":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(max(n_x, 1))
        return cls(
            rng.uniform(-bound, bound, size=(hidden, n_x)),
            np.zeros(hidden),
            rng.uniform(-1.0 / np.sqrt(hidden), 1.0 / np.sqrt(hidden), size=hidden),
            0.0,
        )

    def param_values(self) -> np.ndarray:
        return np.concatenate(
            [self.w_in.ravel(), self.b_in, self.w_out, [self.b_out]]
        )

    def set_param_values(self, values: np.ndarray) -> None:
        nw = self.w_in.size
        h = self.b_in.size
        self.w_in[:] = values[:nw].reshape(self.w_in.shape)
        self.b_in[:] = values[nw : nw + h]
        self.w_out[:] = values[nw + h : nw + 2 * h]
        self.b_out = float(values[-1])

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64).ravel()
        hidden = np.maximum(self.w_in @ x + self.b_in, 0.0)
        return abs(1.0 + self.w_out @ hidden + self.b_out)

    def grad(self, x: np.ndarray) -> np.ndarray:
        """d g / d(w_in, b_in, w_out, b_out), flat."""
        x = np.asarray(x, dtype=np.float64).ravel()
        pre = self.w_in @ x + self.b_in
        hidden = np.maximum(pre, 0.0)
        inner = 1.0 + self.w_out @ hidden + self.b_out
        sg = float(np.sign(inner)) if inner != 0.0 else 0.0
        mask = (pre > 0.0).astype(float)
        g_b_in = sg * self.w_out * mask
        g_w_in = np.outer(g_b_in, x)
        g_w_out = sg * hidden
        return np.concatenate([g_w_in.ravel(), g_b_in, g_w_out, [sg]])


def eval_depth(hypernet: DepthHypernet, x: np.ndarray) -> float:
    """Nonnegative per-input integration bound."""
    return hypernet.value(x)


@dataclass
class NodeModel:
    """A continuous-depth model: h_x, the field, h_y, and the depth span."""

    field_spec: nn.FieldSpec
    theta: dp.DepthParametrization
    hx: AugmentationStrategy
    n_z: int
    depth_span: float = 1.0
    hy_weight: np.ndarray | None = None  # (n_y, n_z); None means identity h_y
    hy_bias: np.ndarray | None = None
    depth_hypernet: DepthHypernet | None = None

    def __post_init__(self):
        if self.hy_weight is not None:
            self.hy_weight = np.asarray(self.hy_weight, dtype=np.float64)
            if self.hy_bias is None:
                self.hy_bias = np.zeros(self.hy_weight.shape[0])
            self.hy_bias = np.asarray(self.hy_bias, dtype=np.float64)
        expected = self._field_output_dim()
        if self.field_spec.output_dim != expected:
            raise nn.ShapeError(
                f"field output {self.field_spec.output_dim} != expected {expected} "
                f"for {self.hx.kind} wiring with n_z={self.n_z}"
            )

    def _field_output_dim(self) -> int:
        if self.hx.kind == "higher-order":
            if self.n_z % self.hx.order:
                raise nn.ShapeError("n_z must be divisible by the lifting order")
            return self.n_z // self.hx.order
        if self.hx.kind == "selective-higher-order":
            if self.hx.n_a % 2:
                raise nn.ShapeError("selective lifting needs an even n_a")
            return self.n_z - self.hx.n_a // 2
        return self.n_z

    @property
    def input_mode(self) -> str:
        return self.field_spec.input_mode

    def span_for(self, x: np.ndarray) -> float:
        if self.depth_hypernet is None:
            return self.depth_span
        s = eval_depth(self.depth_hypernet, x)
        if s <= 0.0:
            raise dp.DepthDomainError(f"adaptive depth {s} is not positive")
        return s

    def hy(self, z: np.ndarray) -> np.ndarray:
        if self.hy_weight is None:
            return z
        return z @ self.hy_weight.T + self.hy_bias


class DepthField:
    """The model's state dynamics for one batch of inputs, with VJPs.

    `value` is what the solvers call (one network evaluation per call);
    `value_vjp` additionally pulls a costate through d(dz)/dz and reports
    the contribution to the native parameter gradient (theta itself, the
    basis coefficients, or the per-segment blocks).
    """

    def __init__(self, model: NodeModel, x: np.ndarray, periodic: bool = False):
        self.model = model
        x = np.asarray(x, dtype=np.float64)
        self.x = x[None, :] if x.ndim == 1 else x
        self.k = self.x.shape[0]
        self.n_z = model.n_z
        self.periodic = periodic
        spec = model.field_spec
        expected = self.n_z
        if spec.input_mode == "depth-concat":
            expected += 1
        elif spec.input_mode == "data-controlled":
            expected += self.x.shape[1]
        if spec.input_dim != expected:
            raise nn.ShapeError(
                f"field input width {spec.input_dim} != {expected} required by "
                f"mode {spec.input_mode!r}"
            )

    @property
    def grad_dim(self) -> int:
        return self.model.theta.grad_dim

    def theta_values(self, s: float) -> np.ndarray:
        return dp.eval_theta(self.model.theta, s, periodic=self.periodic)

    def _theta_at(self, s: float) -> nn.ParamVector:
        vals = dp.eval_theta(self.model.theta, s, periodic=self.periodic)
        return nn.params_from_values(self.model.field_spec, vals)

    def _net_input(self, s: float, Z: np.ndarray) -> np.ndarray:
        mode = self.model.field_spec.input_mode
        if mode == "depth-concat":
            return np.concatenate([Z, np.full((self.k, 1), s)], axis=1)
        if mode == "data-controlled":
            return np.concatenate([Z, self.x], axis=1)
        return Z

    def _assemble(self, Z: np.ndarray, fout: np.ndarray) -> np.ndarray:
        hx = self.model.hx
        if hx.kind == "higher-order":
            blk = self.n_z // hx.order
            return np.concatenate([Z[:, blk:], fout], axis=1)
        if hx.kind == "selective-higher-order":
            half = hx.n_a // 2
            return np.concatenate([Z[:, half : hx.n_a], fout], axis=1)
        return fout

    def value(self, s: float, Z: np.ndarray) -> np.ndarray:
        Z = Z.reshape(self.k, self.n_z)
        fout = nn.mlp_forward(self.model.field_spec, self._theta_at(s), self._net_input(s, Z))
        return self._assemble(Z, np.atleast_2d(fout))

    def value_vjp(
        self, s: float, Z: np.ndarray, A: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (dz/ds, A^T d(dz)/dZ, native parameter-gradient term)."""
        dZ, A_z, g_theta = self.vjp_raw(s, Z, A)
        return dZ, A_z, self.theta_chain(s, g_theta)

    def vjp_raw(
        self, s: float, Z: np.ndarray, A: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Like value_vjp but with the parameter term w.r.t. theta(s) itself."""
        Z = Z.reshape(self.k, self.n_z)
        A = A.reshape(self.k, self.n_z)
        theta = self._theta_at(s)
        inp = self._net_input(s, Z)
        fout = np.atleast_2d(nn.mlp_forward(self.model.field_spec, theta, inp))
        hx = self.model.hx
        A_z = np.zeros_like(A)
        if hx.kind == "higher-order":
            blk = self.n_z // hx.order
            A_z[:, blk:] += A[:, : self.n_z - blk]
            cot = A[:, self.n_z - blk :]
        elif hx.kind == "selective-higher-order":
            half = hx.n_a // 2
            A_z[:, half : hx.n_a] += A[:, :half]
            cot = A[:, half:]
        else:
            cot = A
        g_inp, g_theta = nn.mlp_vjp(self.model.field_spec, theta, inp, cot)
        A_z += np.atleast_2d(g_inp)[:, : self.n_z]
        return self._assemble(Z, fout), A_z, g_theta

    def theta_chain(self, s: float, v_theta: np.ndarray) -> np.ndarray:
        """Map a gradient w.r.t. theta(s) into the native coefficient shape."""
        theta = self.model.theta
        if isinstance(theta, dp.Constant):
            return v_theta
        if isinstance(theta, dp.Galerkin):
            psi = dp.basis_eval(theta.basis, s, periodic=self.periodic)
            return np.outer(psi, v_theta).ravel()
        out = np.zeros(theta.grad_dim)
        i = dp.segment_index(theta, s)
        out[i * theta.n_theta : (i + 1) * theta.n_theta] = v_theta
        return out


def wrap_field(model: NodeModel, x: np.ndarray, periodic: bool = False) -> DepthField:
    """Batched dynamics callable (plus VJPs) for one batch of inputs."""
    return DepthField(model, x, periodic=periodic)


def integrate_model(
    model: NodeModel,
    x: np.ndarray,
    rtol: float = 1e-6,
    atol: float = 1e-6,
    span: tuple[float, float] | None = None,
    periodic: bool = False,
) -> tuple[DepthField, Solution]:
    """Solve the state equation for a batch, stopping at parameter jumps."""
    field = wrap_field(model, x, periodic=periodic)
    z0 = apply_hx(model.hx, x)
    z0 = np.atleast_2d(z0)
    if span is None:
        span = (0.0, model.span_for(x))
    sol = integrate_piecewise(
        lambda s, zf: field.value(s, zf.reshape(field.k, field.n_z)).ravel(),
        z0.ravel(),
        dp.depth_spans(model.theta, span[0], span[1]),
        rtol,
        atol,
    )
    return field, sol


def clamp_to_span(fn, a: float, b: float):
    """Keep stage depths inside the open span so piecewise-constant
    parameters resolve to the segment being integrated (solver stages land
    exactly on junction depths, where the segment lookup is one-sided)."""
    delta = 1e-9 * max(abs(b - a), 1.0)
    lo, hi = min(a, b) + delta, max(a, b) - delta
    return lambda s, y: fn(min(max(s, lo), hi), y)


def integrate_piecewise(fn, z0, spans, rtol, atol) -> Solution:
    """Chain adaptive integrations over consecutive spans, summing NFE."""
    grids, states, nfe = [], [], 0
    z = np.asarray(z0, dtype=np.float64)
    for i, (a, b) in enumerate(spans):
        sol = dopri5_integrate(IvpProblem(clamp_to_span(fn, a, b), z, (a, b), rtol, atol))
        z = sol.terminal
        nfe += sol.nfe
        start = 0 if i == 0 else 1  # drop duplicated junction point
        grids.append(sol.grid[start:])
        states.append(sol.states[start:])
    return Solution(np.concatenate(grids), np.concatenate(states), nfe)


def node_forward(
    model: NodeModel, x: np.ndarray, rtol: float = 1e-6, atol: float = 1e-6
) -> tuple[np.ndarray, Solution]:
    """Model output h_y(z(S)) plus the underlying solver trace."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if model.depth_hypernet is not None and not single:
        # per-sample spans: integrate sample by sample
        outs, nfe, grids, states = [], 0, None, None
        for xi in x:
            yi, soli = node_forward(model, xi, rtol, atol)
            outs.append(yi)
            nfe += soli.nfe
            grids, states = soli.grid, soli.states
        return np.array(outs), Solution(grids, states, nfe)
    field, sol = integrate_model(model, x, rtol, atol)
    zS = sol.terminal.reshape(field.k, field.n_z)
    y = model.hy(zS)
    return (y[0] if single else y), sol


# ---------------------------------------------------------------------------
# 1-D input-conditioned continuous flow
# ---------------------------------------------------------------------------


@dataclass
class Cnf1d:
    """Scalar flow whose field is conditioned on the prior-side sample.

    The network sees [z, c] where c is the state at the prior end of the
    integration (the generative sweep starts there, so the condition is
    simply the initial value of that sweep).  Priors are 1-D Gaussians.
    """

    spec: nn.FieldSpec
    params: nn.ParamVector
    priors: list[tuple[float, float]]
    depth_span: float = 1.0

    def __post_init__(self):
        if self.spec.input_dim != 2 or self.spec.output_dim != 1:
            raise nn.ShapeError("conditional scalar flow needs a 2 -> 1 network")

    def field_value(self, z: np.ndarray, c: np.ndarray) -> np.ndarray:
        inp = np.stack([z, c], axis=-1)
        return nn.mlp_forward(self.spec, self.params, inp)[..., 0]


def _log_normal(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    return -0.5 * ((x - mean) / std) ** 2 - np.log(std * np.sqrt(2.0 * np.pi))


def cnf_generate(cnf: Cnf1d, c: np.ndarray, rtol=1e-8, atol=1e-8) -> tuple[np.ndarray, np.ndarray, Solution]:
    """Generative sweep S -> 0 from prior-side values c.

    Integrates the state together with the full sensitivity J = d z / d c
    (both the initial-value and the conditioning channel), so the map and
    its derivative come back exact.  J starts at 1.
    """
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    k = c.size

    def rhs(s, y):
        z, J = y[:k], y[k:]
        inp = np.stack([z, c], axis=-1)
        tangent = np.stack([J, np.ones(k)], axis=-1)
        f, jvp = nn.mlp_jvp(cnf.spec, cnf.params, inp, tangent)
        return np.concatenate([f[:, 0], jvp[:, 0]])

    y0 = np.concatenate([c, np.ones(k)])
    sol = dopri5_integrate(IvpProblem(rhs, y0, (cnf.depth_span, 0.0), rtol, atol))
    return sol.terminal[:k], sol.terminal[k:], sol


def cnf_sample(cnf: Cnf1d, prior_index: int, n: int, seed: int, rtol=1e-8, atol=1e-8) -> np.ndarray:
    """Draw prior-side values and push them through the generative sweep."""
    if n < 1:
        raise ValueError("need at least one sample")
    mean, std = cnf.priors[prior_index]
    rng = np.random.default_rng(seed)
    zS = rng.normal(mean, std, size=n)
    x, _, _ = cnf_generate(cnf, zS, rtol, atol)
    return x


def cnf_forward_logdet(cnf: Cnf1d, x: np.ndarray, cond: np.ndarray, rtol=1e-8, atol=1e-8) -> tuple[np.ndarray, np.ndarray, Solution]:
    """Forward sweep 0 -> S of (z, integrated divergence) at fixed condition.

    The divergence of a scalar field is just its z-derivative, taken
    analytically from the network's directional derivative.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    cond = np.broadcast_to(np.atleast_1d(cond), x.shape).astype(np.float64)
    k = x.size

    def rhs(s, y):
        z = y[:k]
        inp = np.stack([z, cond], axis=-1)
        tangent = np.stack([np.ones(k), np.zeros(k)], axis=-1)
        f, jvp = nn.mlp_jvp(cnf.spec, cnf.params, inp, tangent)
        return np.concatenate([f[:, 0], jvp[:, 0]])

    y0 = np.concatenate([x, np.zeros(k)])
    sol = dopri5_integrate(IvpProblem(rhs, y0, (0.0, cnf.depth_span), rtol, atol))
    return sol.terminal[:k], sol.terminal[k:], sol


def cnf_logprob(
    cnf: Cnf1d,
    x: np.ndarray,
    prior_index: int,
    rtol: float = 1e-8,
    atol: float = 1e-8,
    c_range: tuple[float, float] = (-10.0, 10.0),
    scan_points: int = 201,
    newton_iters: int = 30,
) -> np.ndarray:
    """Exact model log-density of the generative sweep at points x.

    The generative map sends a prior draw c to a sample; evaluating the
    density at x requires the prior-side preimage c(x), found here by a
    coarse scan plus batched Newton iterations on the exact sensitivity.
    Then log p(x) = log q(c) - log |d(sample)/dc|.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    single = x.ndim == 1 and x.size == 1
    mean, std = cnf.priors[prior_index]

    grid = np.linspace(c_range[0], c_range[1], scan_points)
    psi_grid, _, _ = cnf_generate(cnf, grid, rtol, atol)
    c = grid[np.argmin(np.abs(psi_grid[None, :] - x[:, None]), axis=1)].copy()

    J = np.ones_like(c)
    for _ in range(newton_iters):
        psi, J, _ = cnf_generate(cnf, c, rtol, atol)
        resid = psi - x
        if np.max(np.abs(resid)) < 1e-10:
            break
        step = resid / np.where(np.abs(J) > 1e-12, J, 1e-12)
        c = c - np.clip(step, -1.0, 1.0)
    logp = _log_normal(c, mean, std) - np.log(np.maximum(np.abs(J), 1e-300))
    return logp[0] if single else logp


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _enc(a: np.ndarray | None):
    if a is None:
        return None
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode()}


def _dec(obj):
    if obj is None:
        return None
    flat = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    return flat.reshape(obj["shape"]).copy()


def _theta_to_dict(theta: dp.DepthParametrization):
    if isinstance(theta, dp.Constant):
        return {"kind": "constant", "theta": _enc(theta.theta.values)}
    if isinstance(theta, dp.Galerkin):
        return {
            "kind": "galerkin",
            "basis": {"kind": theta.basis.kind, "m": theta.basis.m, "depth_span": theta.basis.depth_span},
            "alpha": _enc(theta.alpha),
        }
    return {
        "kind": "stacked",
        "grid": _enc(theta.grid),
        "thetas": [_enc(t.values) for t in theta.thetas],
    }


def _theta_from_dict(obj, spec: nn.FieldSpec):
    if obj["kind"] == "constant":
        return dp.Constant(nn.params_from_values(spec, _dec(obj["theta"])))
    if obj["kind"] == "galerkin":
        b = obj["basis"]
        return dp.Galerkin(dp.BasisSet(b["kind"], b["m"], b["depth_span"]), _dec(obj["alpha"]))
    return dp.Stacked(
        _dec(obj["grid"]),
        [nn.params_from_values(spec, _dec(t)) for t in obj["thetas"]],
    )


def model_to_dict(model: NodeModel) -> dict:
    hx = model.hx
    d = {
        "format": "depthflow-checkpoint",
        "version": 1,
        "kind": "node",
        "field_spec": {
            "layer_widths": list(model.field_spec.layer_widths),
            "activations": list(model.field_spec.activations),
            "input_mode": model.field_spec.input_mode,
        },
        "theta": _theta_to_dict(model.theta),
        "hx": {
            "kind": hx.kind,
            "n_a": hx.n_a,
            "order": hx.order,
            "weight": _enc(hx.weight),
            "bias": _enc(hx.bias),
        },
        "n_z": model.n_z,
        "depth_span": model.depth_span,
        "hy_weight": _enc(model.hy_weight),
        "hy_bias": _enc(model.hy_bias),
        "depth_hypernet": None,
    }
    if model.depth_hypernet is not None:
        hn = model.depth_hypernet
        d["depth_hypernet"] = {
            "w_in": _enc(hn.w_in),
            "b_in": _enc(hn.b_in),
            "w_out": _enc(hn.w_out),
            "b_out": hn.b_out,
        }
    return d


def model_from_dict(d: dict) -> NodeModel:
    fs = d["field_spec"]
    spec = nn.FieldSpec(tuple(fs["layer_widths"]), tuple(fs["activations"]), fs["input_mode"])
    hxd = d["hx"]
    hx = AugmentationStrategy(
        hxd["kind"], hxd["n_a"], hxd["order"], _dec(hxd["weight"]), _dec(hxd["bias"])
    )
    hyper = None
    if d.get("depth_hypernet"):
        hd = d["depth_hypernet"]
        hyper = DepthHypernet(_dec(hd["w_in"]), _dec(hd["b_in"]), _dec(hd["w_out"]), hd["b_out"])
    return NodeModel(
        field_spec=spec,
        theta=_theta_from_dict(d["theta"], spec),
        hx=hx,
        n_z=d["n_z"],
        depth_span=d["depth_span"],
        hy_weight=_dec(d["hy_weight"]),
        hy_bias=_dec(d["hy_bias"]),
        depth_hypernet=hyper,
    )


def cnf_to_dict(cnf: Cnf1d) -> dict:
    return {
        "format": "depthflow-checkpoint",
        "version": 1,
        "kind": "cnf1d",
        "field_spec": {
            "layer_widths": list(cnf.spec.layer_widths),
            "activations": list(cnf.spec.activations),
            "input_mode": cnf.spec.input_mode,
        },
        "params": _enc(cnf.params.values),
        "priors": [list(p) for p in cnf.priors],
        "depth_span": cnf.depth_span,
    }


def cnf_from_dict(d: dict) -> Cnf1d:
    fs = d["field_spec"]
    spec = nn.FieldSpec(tuple(fs["layer_widths"]), tuple(fs["activations"]), fs["input_mode"])
    return Cnf1d(
        spec,
        nn.params_from_values(spec, _dec(d["params"])),
        [tuple(p) for p in d["priors"]],
        d["depth_span"],
    )


def save_checkpoint(obj, path) -> None:
    d = cnf_to_dict(obj) if isinstance(obj, Cnf1d) else model_to_dict(obj)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=1)


def load_checkpoint(path):
    with open(path) as fh:
        d = json.load(fh)
    if d.get("kind") == "cnf1d":
        return cnf_from_dict(d)
    return model_from_dict(d)
