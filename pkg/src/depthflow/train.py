"""Optimizers, losses, regularizers, and the batched training loops.

Gradients come from the costate sweep in `adjoint`; this module owns the
bookkeeping around it: packing the trainable arrays (depth coefficients,
input map, output map), Adam/AdamW moment buffers, learning-rate stepping,
and per-epoch history.  The 1-D conditional flow has its own loop since its
training state carries an exact Jacobian sensitivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import depth as dp
from . import nn
from .adjoint import GradientReport, LossSpec, adjoint_gradient, custom_adjoint_gradient
from .models import Cnf1d, NodeModel, apply_hx, hx_grad, wrap_field


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Adam / AdamW over a dict of named parameter arrays."""

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def optimizer_step(state: OptimizerState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update; adamw decays weights decoupled."""
    state.step_count += 1
    t = state.step_count
    out = {}
    for key, p in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != np.shape(p):
            raise nn.ShapeError(f"gradient shape {g.shape} != params {np.shape(p)} for {key!r}")
        p = np.asarray(p, dtype=np.float64)
        if state.kind == "adamw" and state.weight_decay:
            p = p * (1.0 - state.lr * state.weight_decay)
        elif state.kind == "adam" and state.weight_decay:
            g = g + state.weight_decay * p
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        state.m[key] = state.beta1 * state.m[key] + (1 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1 - state.beta2) * g * g
        mhat = state.m[key] / (1 - state.beta1**t)
        vhat = state.v[key] / (1 - state.beta2**t)
        out[key] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def loss_eval(kind: str, predictions: np.ndarray, targets: np.ndarray):
    """Mean squared / absolute error with its gradient w.r.t. predictions."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise nn.ShapeError(f"predictions {p.shape} vs targets {t.shape}")
    r = p - t
    n = max(r.size, 1)
    if kind == "mse":
        return float(np.mean(r * r)), 2.0 * r / n
    if kind == "l1":
        return float(np.mean(np.abs(r))), np.sign(r) / n
    raise ValueError(f"unknown loss kind {kind!r}")


def _combine(a: LossSpec, b: LossSpec) -> LossSpec:
    """Sum two loss specs part by part."""

    def add(f, g):
        if f is None:
            return g
        if g is None:
            return f
        return lambda *args: f(*args) + g(*args)

    return LossSpec(
        terminal=add(a.terminal, b.terminal),
        terminal_grad=add(a.terminal_grad, b.terminal_grad),
        terminal_grad_theta=add(a.terminal_grad_theta, b.terminal_grad_theta),
        running=add(a.running, b.running),
        running_grad=add(a.running_grad, b.running_grad),
        running_grad_theta=add(a.running_grad_theta, b.running_grad_theta),
    )


def regularizer_loss(kind: str, lam: float, field) -> LossSpec:
    """Loss terms penalizing the field norm, batch-averaged.

    integral-kinetic distributes lam * ||dz/ds||_2 over the whole depth and
    rides the costate sweep directly (no state augmentation); the terminal
    variant penalizes only the end-depth field norm.
    """
    k = field.k

    def norm_and_cot(s, Z):
        f = field.value(s, Z)
        norms = np.sqrt(np.sum(f * f, axis=1))
        safe = np.maximum(norms, 1e-12)
        cot = (lam / k) * f / safe[:, None]
        return float(lam * np.mean(norms)), cot

    def value(s, Z, th):
        return norm_and_cot(s, Z)[0]

    def grad_z(s, Z, th):
        _, cot = norm_and_cot(s, Z)
        _, A_z, _ = field.vjp_raw(s, Z, cot)
        return A_z

    def grad_th(s, Z, th):
        _, cot = norm_and_cot(s, Z)
        _, _, g = field.vjp_raw(s, Z, cot)
        return g

    if kind == "integral-kinetic":
        return LossSpec(running=value, running_grad=grad_z, running_grad_theta=grad_th)
    if kind == "terminal-fixed-point":
        return LossSpec(
            terminal=lambda z, th: value(None, z, th),
            terminal_grad=lambda z, th: grad_z(None, z, th),
            terminal_grad_theta=lambda z, th: grad_th(None, z, th),
        )
    raise ValueError(f"unknown regularizer {kind!r}")


def regularizer_eval(kind, model, x, rtol=1e-6, atol=1e-6, lam=1.0) -> float:
    """Value of a regularizer for a batch (forward quadrature)."""
    from .adjoint import forward_loss

    field = wrap_field(model, x)
    value, _ = forward_loss(model, x, regularizer_loss(kind, lam, field), rtol, atol)
    return value


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int | None = None  # None = whole dataset per step
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule_gamma: float = 1.0  # multiplicative lr factor
    schedule_every: int = 0  # epochs between factor applications; 0 = constant
    loss: str = "mse"
    regularizer: str | None = None
    reg_lambda: float = 0.0
    rtol: float = 1e-6
    atol: float = 1e-6
    seed: int = 0
    task: str = "regression"  # regression | classification | tracking
    stop_accuracy: float | None = None

    def __post_init__(self):
        if self.lr < 0 or not (0.0 < self.schedule_gamma <= 1.0):
            raise ValueError("rates must be positive and gamma in (0, 1]")


@dataclass
class TrainHistory:
    loss: list = dc_field(default_factory=list)
    accuracy: list = dc_field(default_factory=list)
    nfe: list = dc_field(default_factory=list)

    def to_dict(self):
        return {"loss": self.loss, "accuracy": self.accuracy, "nfe": self.nfe}


def model_params(model: NodeModel) -> dict:
    out = {"theta": dp.param_coefficients(model.theta).copy()}
    if model.hx.has_params:
        out["hx"] = model.hx.param_values()
    if model.hy_weight is not None:
        out["hy"] = np.concatenate([model.hy_weight.ravel(), model.hy_bias])
    if model.depth_hypernet is not None:
        out["hyper"] = model.depth_hypernet.param_values()
    return out


def set_model_params(model: NodeModel, values: dict) -> None:
    dp.set_param_coefficients(model.theta, values["theta"])
    if "hx" in values:
        model.hx.set_param_values(values["hx"])
    if "hy" in values:
        nw = model.hy_weight.size
        model.hy_weight[:] = values["hy"][:nw].reshape(model.hy_weight.shape)
        model.hy_bias[:] = values["hy"][nw:]
    if "hyper" in values:
        model.depth_hypernet.set_param_values(values["hyper"])


def _task_loss(model: NodeModel, targets: np.ndarray, kind: str, stash: dict) -> LossSpec:
    """Terminal loss on h_y(z(S)) vs targets; stashes what h_y grads need."""
    W = model.hy_weight

    def value(zS, th):
        v, _ = loss_eval(kind, model.hy(zS), targets)
        return v

    def grad(zS, th):
        pred = model.hy(zS)
        _, dpred = loss_eval(kind, pred, targets)
        stash["zS"] = zS
        stash["dpred"] = dpred
        stash["pred"] = pred
        return dpred if W is None else dpred @ W

    return LossSpec(terminal=value, terminal_grad=grad)


def tracking_loss(beta, k: int) -> LossSpec:
    """Depth-distributed squared tracking error against a reference signal."""

    def value(s, Z, th):
        return float(np.mean(np.sum((Z - beta(s)) ** 2, axis=1)))

    def grad(s, Z, th):
        return 2.0 * (Z - beta(s)) / Z.shape[0]

    return LossSpec(running=value, running_grad=grad)


def _accuracy(pred: np.ndarray, targets: np.ndarray) -> float:
    """Sign agreement for the +-1 classification tasks."""
    return float(np.mean(np.sign(pred) == np.sign(targets)))


def _adaptive_step(model, x, y, config: TrainConfig, opt: OptimizerState):
    """Per-sample sweep for models whose depth span depends on the input."""
    from .adjoint import adaptive_depth_grad

    k = x.shape[0]
    grads = {key: np.zeros_like(np.asarray(v)) for key, v in model_params(model).items()}
    total_loss, nfe = 0.0, 0
    preds = []
    for i in range(k):
        stash = {}
        spec = _task_loss(model, y[i : i + 1], config.loss, stash)
        rep = adaptive_depth_grad(model, x[i], spec, config.rtol, config.atol)
        grads["theta"] += np.asarray(rep.grad).ravel() / k
        if "hyper" in grads:
            grads["hyper"] += rep.grad_hypernet / k
        if model.hx.has_params:
            grads["hx"] += hx_grad(model.hx, x[i : i + 1], rep.grad_z0) / k
        if model.hy_weight is not None and "dpred" in stash:
            dpred, zS = stash["dpred"], stash["zS"]
            grads["hy"] += np.concatenate([(dpred.T @ zS).ravel(), dpred.sum(axis=0)]) / k
        total_loss += rep.loss / k
        nfe += rep.nfe_forward
        preds.append(stash["pred"][0] if "pred" in stash else None)
    new = optimizer_step(opt, model_params(model), grads)
    set_model_params(model, new)
    report = GradientReport(loss=total_loss, grad=grads["theta"], grad_z0=np.zeros((k, model.n_z)),
                            nfe_forward=nfe)
    stash = {"pred": np.stack(preds)} if preds[0] is not None else {}
    return report, stash


def train_step(model, x, y, config: TrainConfig, opt: OptimizerState, loss_spec=None):
    """One batch: forward + costate sweep + optimizer update."""
    if model.depth_hypernet is not None and loss_spec is None:
        return _adaptive_step(model, x, y, config, opt)
    stash = {}
    if loss_spec is None:
        spec = _task_loss(model, y, config.loss, stash)
    else:
        spec = loss_spec
    if config.regularizer:
        field = wrap_field(model, x)
        spec = _combine(spec, regularizer_loss(config.regularizer, config.reg_lambda, field))
    report = adjoint_gradient(model, x, spec, config.rtol, config.atol)
    grads = {"theta": np.asarray(report.grad).ravel()}
    if model.hx.has_params:
        grads["hx"] = hx_grad(model.hx, x, report.grad_z0)
    if model.hy_weight is not None and "dpred" in stash:
        dpred, zS = stash["dpred"], stash["zS"]
        grads["hy"] = np.concatenate([(dpred.T @ zS).ravel(), dpred.sum(axis=0)])
    elif model.hy_weight is not None:
        grads["hy"] = np.zeros(model.hy_weight.size + model.hy_bias.size)
    new = optimizer_step(opt, model_params(model), grads)
    set_model_params(model, new)
    return report, stash


def train_loop(model: NodeModel, dataset, config: TrainConfig):
    """Mini-batch gradient descent; history records loss, accuracy, NFE."""
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState(
        kind=config.optimizer,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    history = TrainHistory()
    xs = np.asarray(dataset.inputs, dtype=np.float64)
    ys = np.asarray(dataset.targets, dtype=np.float64)
    n = xs.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    bs = config.batch_size or n
    for epoch in range(config.epochs):
        if config.schedule_every and epoch and epoch % config.schedule_every == 0:
            opt.lr *= config.schedule_gamma
        order = rng.permutation(n)
        ep_loss, ep_acc, ep_nfe, nb = 0.0, 0.0, 0.0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            report, stash = train_step(model, xs[idx], ys[idx], config, opt)
            ep_loss += report.loss
            ep_nfe += report.nfe_forward
            if "pred" in stash:
                ep_acc += _accuracy(stash["pred"], ys[idx])
            nb += 1
        history.loss.append(ep_loss / nb)
        history.accuracy.append(ep_acc / nb)
        history.nfe.append(ep_nfe / nb)
        if config.stop_accuracy is not None and history.accuracy[-1] >= config.stop_accuracy:
            break
    return model, history


def train_tracking(model: NodeModel, beta, z0_batch: np.ndarray, config: TrainConfig):
    """Fit a depth-distributed tracking loss from a batch of start states."""
    opt = OptimizerState(kind=config.optimizer, lr=config.lr, weight_decay=config.weight_decay)
    history = TrainHistory()
    z0 = np.atleast_2d(np.asarray(z0_batch, dtype=np.float64))
    spec = tracking_loss(beta, z0.shape[0])
    for epoch in range(config.epochs):
        if config.schedule_every and epoch and epoch % config.schedule_every == 0:
            opt.lr *= config.schedule_gamma
        # start states double as the "inputs"; h_x is the identity here
        report, _ = train_step(model, z0, None, config, opt, loss_spec=spec)
        history.loss.append(report.loss)
        history.accuracy.append(0.0)
        history.nfe.append(report.nfe_forward)
    return model, history


# ---------------------------------------------------------------------------
# Conditional 1-D flow training
# ---------------------------------------------------------------------------


class _CnfTrainField:
    """Dynamics of (state, Jacobian sensitivity) for one batch of conditions.

    State per sample is (y, J) with J = d y / d(condition); the derivative
    terms needed by the costate sweep come from the exact forward-over-
    reverse pass of the network.
    """

    def __init__(self, cnf: Cnf1d, cond: np.ndarray):
        self.cnf = cnf
        self.cond = np.asarray(cond, dtype=np.float64).ravel()
        self.k = self.cond.size
        self.n_z = 2
        self.grad_dim = len(cnf.params)

    def theta_values(self, s):
        return self.cnf.params.values

    def theta_chain(self, s, v):
        return v

    def _inp_tan(self, Z):
        inp = np.stack([Z[:, 0], self.cond], axis=-1)
        tan = np.stack([Z[:, 1], np.ones(self.k)], axis=-1)
        return inp, tan

    def value(self, s, Z):
        Z = Z.reshape(self.k, 2)
        inp, tan = self._inp_tan(Z)
        f, jvp = nn.mlp_jvp(self.cnf.spec, self.cnf.params, inp, tan)
        return np.stack([f[:, 0], jvp[:, 0]], axis=-1)

    def value_vjp(self, s, Z, A):
        Z = Z.reshape(self.k, 2)
        A = A.reshape(self.k, 2)
        inp, tan = self._inp_tan(Z)
        f, jvp = nn.mlp_jvp(self.cnf.spec, self.cnf.params, inp, tan)
        gh, gth, gp = nn.mlp_jvp_vjp(
            self.cnf.spec, self.cnf.params, inp, tan, A[:, :1], A[:, 1:]
        )
        A_z = np.stack([gh[:, 0], gth[:, 0]], axis=-1)
        dZ = np.stack([f[:, 0], jvp[:, 0]], axis=-1)
        return dZ, A_z, gp


def cnf_batch_gradient(cnf: Cnf1d, cond: np.ndarray, target_mean: np.ndarray,
                       target_std: np.ndarray, rtol=1e-8, atol=1e-8) -> GradientReport:
    """KL-style generative loss and its exact parameter gradient.

    Runs the generative sweep S -> 0 from prior-side values and penalizes
    the end states under the per-sample Gaussian targets while rewarding
    volume spread through log |J|.
    """
    field = _CnfTrainField(cnf, cond)
    k = field.k
    mu = np.broadcast_to(target_mean, (k,))
    sd = np.broadcast_to(target_std, (k,))

    def terminal(Z, th):
        y, J = Z[:, 0], Z[:, 1]
        logp = -0.5 * ((y - mu) / sd) ** 2 - np.log(sd * math.sqrt(2 * math.pi))
        return float(np.mean(-logp - np.log(np.maximum(np.abs(J), 1e-300))))

    def terminal_grad(Z, th):
        y, J = Z[:, 0], Z[:, 1]
        gy = (y - mu) / sd**2 / k
        gJ = -1.0 / (np.where(np.abs(J) > 1e-300, J, 1e-300)) / k
        return np.stack([gy, gJ], axis=-1)

    loss = LossSpec(terminal=terminal, terminal_grad=terminal_grad)
    z0 = np.stack([field.cond, np.ones(k)], axis=-1)
    return custom_adjoint_gradient(field, z0, loss, (cnf.depth_span, 0.0), rtol, atol)


def train_cnf(cnf: Cnf1d, targets: list[tuple[float, float]], config: TrainConfig,
              batch_size: int = 128):
    """Train the conditional flow to warp each prior onto its target."""
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState(kind=config.optimizer, lr=config.lr, weight_decay=config.weight_decay)
    history = TrainHistory()
    n_priors = len(cnf.priors)
    for it in range(config.epochs):
        per = batch_size // n_priors
        cond = np.concatenate(
            [rng.normal(m, s, size=per) for m, s in cnf.priors]
        )
        mu = np.concatenate([np.full(per, targets[i][0]) for i in range(n_priors)])
        sd = np.concatenate([np.full(per, targets[i][1]) for i in range(n_priors)])
        report = cnf_batch_gradient(cnf, cond, mu, sd, config.rtol, config.atol)
        new = optimizer_step(opt, {"theta": cnf.params.values.copy()}, {"theta": report.grad})
        cnf.params.values[:] = new["theta"]
        history.loss.append(report.loss)
        history.accuracy.append(0.0)
        history.nfe.append(report.nfe_forward)
    return cnf, history
