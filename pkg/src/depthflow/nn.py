"""Dense feed-forward vector-field networks with hand-written derivatives.

Everything here is plain numpy: forward evaluation, reverse-mode
vector-Jacobian products with respect to inputs and parameters, and a
forward-over-reverse pass (`mlp_jvp_vjp`) that differentiates a directional
derivative of the network.  No autodiff framework is involved; the costate
machinery calls these primitives at solver-chosen depths, so every call is
stateless and recomputes its own activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid", "relu", "softplus", "elu", "identity")

_SOFTPLUS_CUTOFF = 30.0  # above this, log(1+e^x) == x to double precision


class ShapeError(ValueError):
    """Dimension mismatch between a network, its parameters, or its input."""


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "softplus":
        return np.where(x > _SOFTPLUS_CUTOFF, x, np.log1p(np.exp(np.minimum(x, _SOFTPLUS_CUTOFF))))
    if name == "elu":
        return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


def _act_prime(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if name == "sigmoid":
        s = _act("sigmoid", x)
        return s * (1.0 - s)
    if name == "relu":
        return (x > 0.0).astype(x.dtype)
    if name == "softplus":
        return _act("sigmoid", x)
    if name == "elu":
        return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))
    if name == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {name!r}")


def _act_second(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(x)
        return -2.0 * t * (1.0 - t * t)
    if name == "sigmoid":
        s = _act("sigmoid", x)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    if name == "relu":
        return np.zeros_like(x)
    if name == "softplus":
        s = _act("sigmoid", x)
        return s * (1.0 - s)
    if name == "elu":
        return np.where(x > 0.0, 0.0, np.exp(np.minimum(x, 0.0)))
    if name == "identity":
        return np.zeros_like(x)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class FieldSpec:
    """Architecture of a vector-field network.

    `layer_widths` includes the input and output widths, so a 2-16-2 network
    is ``(2, 16, 2)``.  `activations` has one tag per affine layer; the last
    one defaults to identity (a linear final layer keeps the vector field
    sign-unconstrained).  `input_mode` records how the enclosing model feeds
    the network: the raw state, the state with the depth variable appended,
    or the state with the conditioning input appended.
    """

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]
    input_mode: str = "autonomous"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ShapeError("layer_widths needs at least input and output entries")
        if any(w <= 0 for w in self.layer_widths):
            raise ShapeError(f"non-positive layer width in {self.layer_widths}")
        if len(self.activations) != len(self.layer_widths) - 1:
            raise ShapeError(
                f"expected {len(self.layer_widths) - 1} activation tags, "
                f"got {len(self.activations)}"
            )
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.input_mode not in ("autonomous", "depth-concat", "data-controlled"):
            raise ValueError(f"unknown input mode {self.input_mode!r}")

    @classmethod
    def mlp(cls, widths, hidden="tanh", final="identity", input_mode="autonomous"):
        """Spec with one hidden activation everywhere but the final layer."""
        widths = tuple(int(w) for w in widths)
        acts = (hidden,) * (len(widths) - 2) + (final,)
        return cls(widths, acts, input_mode)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_params(self) -> int:
        widths = self.layer_widths
        return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(self.n_layers))


@dataclass(frozen=True)
class LayerSlot:
    """Slice bookkeeping for one affine layer inside a flat parameter array."""

    w_offset: int
    b_offset: int
    shape: tuple[int, int]  # (fan_out, fan_in)


def layer_layout(spec: FieldSpec) -> tuple[LayerSlot, ...]:
    slots = []
    off = 0
    widths = spec.layer_widths
    for i in range(spec.n_layers):
        fan_in, fan_out = widths[i], widths[i + 1]
        slots.append(LayerSlot(off, off + fan_in * fan_out, (fan_out, fan_in)))
        off += fan_in * fan_out + fan_out
    return tuple(slots)


@dataclass
class ParamVector:
    """Flat parameter storage plus the layout mapping layers to slices."""

    values: np.ndarray
    layout: tuple[LayerSlot, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def weight(self, i: int) -> np.ndarray:
        s = self.layout[i]
        return self.values[s.w_offset : s.b_offset].reshape(s.shape)

    def bias(self, i: int) -> np.ndarray:
        s = self.layout[i]
        return self.values[s.b_offset : s.b_offset + s.shape[0]]


def init_params(spec: FieldSpec, seed: int) -> ParamVector:
    """Seeded init: weights uniform on +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    layout = layer_layout(spec)
    values = np.zeros(spec.n_params)
    for slot in layout:
        fan_out, fan_in = slot.shape
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        values[slot.w_offset : slot.b_offset] = w.ravel()
    return ParamVector(values, layout)


def zero_params(spec: FieldSpec) -> ParamVector:
    return ParamVector(np.zeros(spec.n_params), layer_layout(spec))


def params_from_values(spec: FieldSpec, values: np.ndarray) -> ParamVector:
    values = np.asarray(values, dtype=np.float64)
    if values.size != spec.n_params:
        raise ShapeError(f"expected {spec.n_params} parameters, got {values.size}")
    return ParamVector(values, layer_layout(spec))


def _check_params(spec: FieldSpec, params: ParamVector) -> ParamVector:
    if len(params) != spec.n_params:
        raise ShapeError(f"expected {spec.n_params} parameters, got {len(params)}")
    if not params.layout:
        return ParamVector(params.values, layer_layout(spec))
    return params


def _as_batch(spec: FieldSpec, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ShapeError(
            f"layer 0 expects input width {spec.input_dim}, got {x.shape[1]}"
        )
    return x, single


def mlp_forward(spec: FieldSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input or a batch of inputs.

    Exactly one call here is what the solvers count as one NFE.
    """
    params = _check_params(spec, params)
    h, single = _as_batch(spec, x)
    for i in range(spec.n_layers):
        h = h @ params.weight(i).T + params.bias(i)
        h = _act(spec.activations[i], h)
    return h[0] if single else h


def mlp_vjp(
    spec: FieldSpec, params: ParamVector, x: np.ndarray, cotangent: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode product: cotangent^T d(output)/d(input, params).

    For batched input the parameter gradient is summed over the batch while
    the input gradient stays per-sample.  Recomputes the forward pass; no
    tape survives between calls.
    """
    params = _check_params(spec, params)
    h, single = _as_batch(spec, x)
    cot = np.asarray(cotangent, dtype=np.float64)
    if single and cot.ndim == 1:
        cot = cot[None, :]
    if cot.shape != (h.shape[0], spec.output_dim):
        raise ShapeError(
            f"cotangent shape {cot.shape} does not match output "
            f"({h.shape[0]}, {spec.output_dim})"
        )

    hs = [h]
    us = []
    for i in range(spec.n_layers):
        u = hs[-1] @ params.weight(i).T + params.bias(i)
        us.append(u)
        hs.append(_act(spec.activations[i], u))

    grad_params = np.zeros(spec.n_params)
    g = cot
    for i in reversed(range(spec.n_layers)):
        gu = g * _act_prime(spec.activations[i], us[i])
        slot = params.layout[i]
        grad_params[slot.w_offset : slot.b_offset] = (gu.T @ hs[i]).ravel()
        grad_params[slot.b_offset : slot.b_offset + slot.shape[0]] = gu.sum(axis=0)
        g = gu @ params.weight(i)
    return (g[0] if single else g), grad_params


def mlp_jvp(
    spec: FieldSpec, params: ParamVector, x: np.ndarray, tangent: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-mode directional derivative in the input: (f(x), df/dx . t)."""
    params = _check_params(spec, params)
    h, single = _as_batch(spec, x)
    t = np.asarray(tangent, dtype=np.float64)
    if single and t.ndim == 1:
        t = t[None, :]
    if t.shape != h.shape:
        raise ShapeError(f"tangent shape {t.shape} does not match input {h.shape}")
    for i in range(spec.n_layers):
        w = params.weight(i)
        u = h @ w.T + params.bias(i)
        tu = t @ w.T
        h = _act(spec.activations[i], u)
        t = _act_prime(spec.activations[i], u) * tu
    if single:
        return h[0], t[0]
    return h, t


def mlp_jvp_vjp(
    spec: FieldSpec,
    params: ParamVector,
    x: np.ndarray,
    tangent: np.ndarray,
    cot_value: np.ndarray | None,
    cot_jvp: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reverse pass through the pair (f(x), df/dx . tangent).

    Returns cotangent products with respect to the input, the tangent, and
    the parameters.  This supplies the exact second-order terms needed when
    an ODE state carries a Jacobian sensitivity alongside the flow (the 1-D
    flow log-density does this), so activations expose second derivatives.
    """
    params = _check_params(spec, params)
    h0, single = _as_batch(spec, x)
    t0 = np.asarray(tangent, dtype=np.float64)
    if single and t0.ndim == 1:
        t0 = t0[None, :]
    k = h0.shape[0]
    ct = np.asarray(cot_jvp, dtype=np.float64).reshape(k, spec.output_dim)
    cy = (
        np.zeros((k, spec.output_dim))
        if cot_value is None
        else np.asarray(cot_value, dtype=np.float64).reshape(k, spec.output_dim)
    )

    hs, ths, us, tus = [h0], [t0], [], []
    for i in range(spec.n_layers):
        w = params.weight(i)
        u = hs[-1] @ w.T + params.bias(i)
        tu = ths[-1] @ w.T
        us.append(u)
        tus.append(tu)
        hs.append(_act(spec.activations[i], u))
        ths.append(_act_prime(spec.activations[i], u) * tu)

    grad_params = np.zeros(spec.n_params)
    gh, gth = cy, ct
    for i in reversed(range(spec.n_layers)):
        name = spec.activations[i]
        sp = _act_prime(name, us[i])
        gu = gh * sp + gth * _act_second(name, us[i]) * tus[i]
        gtu = gth * sp
        slot = params.layout[i]
        w = params.weight(i)
        grad_params[slot.w_offset : slot.b_offset] = (
            gu.T @ hs[i] + gtu.T @ ths[i]
        ).ravel()
        grad_params[slot.b_offset : slot.b_offset + slot.shape[0]] = gu.sum(axis=0)
        gh = gu @ w
        gth = gtu @ w
    if single:
        return gh[0], gth[0], grad_params
    return gh, gth, grad_params
