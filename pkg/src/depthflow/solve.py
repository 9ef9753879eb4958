"""Fixed-step RK4 and adaptive Dormand-Prince 5(4) integration.

Both integrators work on flat float64 state vectors and support either
integration direction (the costate sweep and flow-model sampling both run
backward in depth).  The NFE counter on a Solution counts every call to the
field, including rejected steps and the startup step-size probe.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np


class DivergenceError(RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, depth: float):
        super().__init__(f"non-finite state at depth {depth}")
        self.depth = depth


class StiffnessError(RuntimeError):
    """Adaptive step size underflowed; the problem is too stiff."""

    def __init__(self, depth: float, h: float):
        super().__init__(f"step size underflow ({h:.3e}) at depth {depth}")
        self.depth = depth


@dataclass
class IvpProblem:
    """An initial value problem dz/ds = field(s, z) over a depth span."""

    field: Callable[[float, np.ndarray], np.ndarray]
    z0: np.ndarray
    span: tuple[float, float]
    rtol: float = 1e-6
    atol: float = 1e-6

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=np.float64)
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.span[0] == self.span[1]:
            raise ValueError("empty integration span")


@dataclass
class Solution:
    """Accepted depth grid, states at those depths, and the evaluation count."""

    grid: np.ndarray
    states: np.ndarray  # (len(grid), n)
    nfe: int

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


class _CountingField:
    def __init__(self, fn):
        self.fn = fn
        self.nfe = 0

    def __call__(self, s, z):
        self.nfe += 1
        return np.asarray(self.fn(s, z), dtype=np.float64)


def rk4_integrate(problem: IvpProblem, n_steps: int) -> Solution:
    """Classical fixed-step RK4; exactly 4 field calls per step."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    f = _CountingField(problem.field)
    s0, s1 = problem.span
    h = (s1 - s0) / n_steps
    z = problem.z0.copy()
    grid = [s0]
    states = [z.copy()]
    s = s0
    for i in range(n_steps):
        k1 = f(s, z)
        k2 = f(s + h / 2, z + h / 2 * k1)
        k3 = f(s + h / 2, z + h / 2 * k2)
        k4 = f(s + h, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        s = s0 + (i + 1) * h
        if not np.all(np.isfinite(z)):
            raise DivergenceError(s)
        grid.append(s)
        states.append(z.copy())
    return Solution(np.array(grid), np.array(states), f.nfe)


def _hairer_h0(f: _CountingField, s0: float, z0: np.ndarray, direction: float,
               span_len: float, rtol: float, atol: float) -> float:
    """Standard startup heuristic: scaled norms plus one Euler probe."""
    scale = atol + rtol * np.abs(z0)
    f0 = f(s0, z0)
    d0 = np.sqrt(np.mean((z0 / scale) ** 2)) if z0.size else 0.0
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    if d0 < 1e-5 or d1 < 1e-5:
        return min(span_len / 100.0, span_len)
    h0 = 0.01 * d0 / d1
    z1 = z0 + direction * h0 * f0
    f1 = f(s0 + direction * h0, z1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span_len)


def initial_step(problem: IvpProblem) -> float:
    """First trial step size for the adaptive integrator."""
    f = _CountingField(problem.field)
    s0, s1 = problem.span
    direction = 1.0 if s1 > s0 else -1.0
    return _hairer_h0(f, s0, problem.z0, direction, abs(s1 - s0),
                      problem.rtol, problem.atol)


# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_UNDERFLOW = 1e-12


def dopri5_integrate(problem: IvpProblem, max_steps: int = 100_000) -> Solution:
    """Adaptive Dormand-Prince 5(4) with FSAL and mixed-tolerance RMS control.

    A step is accepted when the RMS of e_i / (atol + rtol * max(|z_i|,
    |z_new_i|)) is <= 1; the next step scales by 0.9 * err^(-1/5) clamped to
    [0.2, 10].  The final step is clipped so the terminal depth is hit
    exactly.
    """
    f = _CountingField(problem.field)
    s0, s1 = problem.span
    direction = 1.0 if s1 > s0 else -1.0
    span_len = abs(s1 - s0)
    rtol, atol = problem.rtol, problem.atol

    z = problem.z0.copy()
    s = s0
    h = _hairer_h0(f, s0, z, direction, span_len, rtol, atol)
    k1 = f(s, z)  # FSAL: reused across accepted steps

    grid = [s0]
    states = [z.copy()]
    ks = [np.empty_like(z) for _ in range(7)]
    for _ in range(max_steps):
        h = min(h, abs(s1 - s))
        if h < _UNDERFLOW * max(span_len, 1.0):
            raise StiffnessError(s, h)
        hd = direction * h
        ks[0] = k1
        for i in range(1, 7):
            zi = z + hd * sum(a * k for a, k in zip(_A[i], ks[:i]))
            ks[i] = f(s + _C[i] * hd, zi)
        z_new = z + hd * sum(b * k for b, k in zip(_B5, ks))
        err_vec = hd * sum((b5 - b4) * k for b5, b4, k in zip(_B5, _B4, ks))
        if not np.all(np.isfinite(z_new)):
            raise DivergenceError(s + hd)
        scale = atol + rtol * np.maximum(np.abs(z), np.abs(z_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))

        if err <= 1.0:
            s = s + hd
            z = z_new
            k1 = ks[6]  # FSAL
            grid.append(s)
            states.append(z.copy())
            if abs(s1 - s) <= 1e-14 * max(span_len, 1.0):
                grid[-1] = s1
                return Solution(np.array(grid), np.array(states), f.nfe)
            factor = _MAX_FACTOR if err == 0.0 else min(
                _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err ** -0.2)
            )
        else:
            factor = max(_MIN_FACTOR, _SAFETY * err ** -0.2)
        h = h * factor
    raise StiffnessError(s, h)
