"""Finite-difference oracle sweep over variants x parametrizations x losses.

Each cell builds small random problems, runs the costate sweep, and
compares a handful of randomly chosen coefficient derivatives against
central differences of the forward loss.  Used by the CLI `gradcheck`
subcommand and by the acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import depth as dp
from . import nn
from .adjoint import LossSpec, adjoint_gradient
from .models import AugmentationStrategy, NodeModel, apply_hx, clamp_to_span, wrap_field
from .solve import IvpProblem, rk4_integrate

VARIANTS = ("vanilla", "depth-concat", "data-controlled", "higher-order")
PARAMS = ("constant", "galerkin", "stacked")
LOSSES = ("terminal", "integral", "theta-dependent")


@dataclass
class GradcheckConfig:
    seeds: int = 20
    coords: int = 3  # FD-probed coefficients per problem
    fd_step: float = 1e-5
    rtol: float = 1e-8
    atol: float = 1e-8
    hidden: int = 5
    threshold: float = 1e-4
    corrupt: bool = False  # harness self-test: bias the adjoint gradient


@dataclass
class GradcheckResult:
    cells: dict = dc_field(default_factory=dict)  # (variant, param, loss) -> max rel err
    threshold: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(v < self.threshold for v in self.cells.values())

    def rows(self):
        for key in sorted(self.cells):
            err = self.cells[key]
            yield key, err, err < self.threshold


def _build_problem(variant: str, param: str, seed: int, hidden: int):
    rng = np.random.default_rng(seed)
    if variant == "higher-order":
        n_x, n_z, f_out, order = 1, 2, 1, 2
        hx = AugmentationStrategy("higher-order", order=2)
    else:
        n_x, n_z, f_out, order = 2, 2, 2, 1
        hx = AugmentationStrategy("none")
    mode = {
        "vanilla": "autonomous",
        "higher-order": "autonomous",
        "depth-concat": "depth-concat",
        "data-controlled": "data-controlled",
    }[variant]
    f_in = n_z + {"autonomous": 0, "depth-concat": 1, "data-controlled": n_x}[mode]
    spec = nn.FieldSpec.mlp([f_in, hidden, f_out], input_mode=mode)
    base = nn.init_params(spec, seed)
    if param == "constant":
        theta = dp.Constant(base)
    elif param == "galerkin":
        basis = dp.BasisSet.fourier(1, 1.0)
        alpha = 0.5 * rng.standard_normal((basis.m, len(base)))
        alpha[0] = base.values
        theta = dp.Galerkin(basis=basis, alpha=alpha, layout=base.layout)
    else:
        grid = np.array([0.0, 0.45, 1.0])
        theta = dp.Stacked(grid=grid, thetas=[base, nn.init_params(spec, seed + 99)])
    model = NodeModel(field_spec=spec, theta=theta, hx=hx, n_z=n_z, depth_span=1.0)
    x = rng.uniform(-1.0, 1.0, size=(2, n_x))
    return model, x, rng


def _build_loss(kind: str, rng) -> LossSpec:
    tgt = rng.uniform(-1.0, 1.0, size=(2, 2))
    if kind == "terminal":
        return LossSpec.terminal_only(
            lambda z: float(np.sum((z - tgt) ** 2)),
            lambda z: 2.0 * (z - tgt),
        )
    if kind == "integral":
        return LossSpec.running_only(
            lambda s, z: float(np.sum(z * z)),
            lambda s, z: 2.0 * z,
        )
    # both loss pieces depend explicitly on the instantaneous parameters
    return LossSpec(
        terminal=lambda z, th: float(np.sum((z - tgt) ** 2) + 0.05 * np.sum(th**2)),
        terminal_grad=lambda z, th: 2.0 * (z - tgt),
        terminal_grad_theta=lambda z, th: 0.1 * th,
        running=lambda s, z, th: float(0.5 * np.sum(z * z) + 0.02 * np.sum(th**2)),
        running_grad=lambda s, z, th: z,
        running_grad_theta=lambda s, z, th: 0.04 * th,
    )


def _fd_loss(model: NodeModel, x: np.ndarray, loss: LossSpec, n_steps: int = 120) -> float:
    """Loss on a fixed fourth-order grid.

    The finite-difference oracle needs a loss whose discretization error is
    smooth in the parameters; an adaptive solver's accept/reject sequence
    can flip between the +h and -h evaluations and swamp the difference.
    """
    field = wrap_field(model, x)
    k, nz = field.k, field.n_z
    n = k * nz
    has_running = loss.running is not None

    def rhs(s, y):
        Z = y[:n].reshape(k, nz)
        dZ = field.value(s, Z).ravel()
        if not has_running:
            return dZ
        return np.concatenate([dZ, [loss.running(s, Z, field.theta_values(s))]])

    z0 = np.atleast_2d(apply_hx(model.hx, x))
    y = np.concatenate([z0.ravel(), [0.0]]) if has_running else z0.ravel()
    for a, b in dp.depth_spans(model.theta, 0.0, model.depth_span):
        steps = max(int(round(n_steps * abs(b - a))), 8)
        y = rk4_integrate(IvpProblem(clamp_to_span(rhs, a, b), y, (a, b)), steps).terminal
    value = float(y[n]) if has_running else 0.0
    if loss.terminal is not None:
        z_end = y[:n].reshape(k, nz)
        value += float(loss.terminal(z_end, field.theta_values(model.depth_span)))
    return value


def check_cell(variant: str, param: str, loss_kind: str, cfg: GradcheckConfig) -> float:
    """Max relative error over the cell's seeded problems."""
    worst = 0.0
    offset = 100 * VARIANTS.index(variant) + 10 * PARAMS.index(param) + LOSSES.index(loss_kind)
    for seed in range(cfg.seeds):
        model, x, rng = _build_problem(variant, param, 1000 * seed + offset, cfg.hidden)
        loss = _build_loss(loss_kind, rng)
        report = adjoint_gradient(model, x, loss, cfg.rtol, cfg.atol)
        grad = np.asarray(report.grad).ravel()
        if cfg.corrupt:
            grad = grad + 10 * cfg.threshold * (1.0 + np.abs(grad))
        coeffs = dp.param_coefficients(model.theta)
        scale = max(float(np.max(np.abs(grad))), 1e-8)
        for i in rng.choice(coeffs.size, size=min(cfg.coords, coeffs.size), replace=False):
            h = cfg.fd_step
            for sign in (1.0, -1.0):
                coeffs[i] += sign * h
                dp.set_param_coefficients(model.theta, coeffs)
                val = _fd_loss(model, x, loss)
                coeffs[i] -= sign * h
                if sign > 0:
                    up = val
                else:
                    down = val
            dp.set_param_coefficients(model.theta, coeffs)
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(grad[i]), 1e-3 * scale, 1e-10)
            worst = max(worst, abs(grad[i] - fd) / denom)
    return worst


def run_gradcheck(cfg: GradcheckConfig | None = None) -> GradcheckResult:
    cfg = cfg or GradcheckConfig()
    result = GradcheckResult(threshold=cfg.threshold)
    for variant in VARIANTS:
        for param in PARAMS:
            for loss_kind in LOSSES:
                result.cells[(variant, param, loss_kind)] = check_cell(
                    variant, param, loss_kind, cfg
                )
    return result
