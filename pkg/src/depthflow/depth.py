"""Depth-varying parameter maps s -> theta(s).

Three realizations: a constant vector, a truncated spectral expansion on a
fixed basis (Fourier, monomials, or Chebyshev), and a piecewise-constant
profile over a depth grid.  The constant map is the single-segment /
single-basis-function special case of the other two, and the reduction is
tested explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ParamVector


class DepthDomainError(ValueError):
    """Depth coordinate outside the parametrization's span."""


@dataclass(frozen=True)
class BasisSet:
    """A finite family of scalar basis functions on [0, S].

    For ``fourier`` the count must be odd: m = 2H + 1 functions made of the
    constant, then sin/cos pairs at harmonics k = 1..H.  Keeping the
    constant term means a constant theta(s) is exactly representable.
    ``polynomial`` uses monomials s^j; ``chebyshev`` uses T_j on s rescaled
    to [-1, 1].
    """

    kind: str
    m: int
    depth_span: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fourier", "polynomial", "chebyshev"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.m < 1:
            raise ValueError("need at least one basis function")
        if self.kind == "fourier" and self.m % 2 == 0:
            raise ValueError("fourier basis has m = 2H+1 functions (constant + pairs)")
        if self.depth_span <= 0:
            raise ValueError("depth span must be positive")

    @classmethod
    def fourier(cls, harmonics: int, depth_span: float = 1.0) -> "BasisSet":
        return cls("fourier", 2 * harmonics + 1, depth_span)


def basis_eval(basis: BasisSet, s: float, periodic: bool = False) -> np.ndarray:
    """Evaluate all basis functions at depth s.

    With ``periodic=True`` the depth is wrapped into [0, S] before
    evaluation; for the Fourier basis this is its natural periodic
    extension, used when extrapolating trained trackers beyond the
    training span.
    """
    S = basis.depth_span
    if periodic:
        s = float(np.mod(s, S))
    if s < -1e-12 or s > S + 1e-12:
        raise DepthDomainError(f"depth {s} outside [0, {S}]")
    s = min(max(s, 0.0), S)
    out = np.empty(basis.m)
    if basis.kind == "fourier":
        out[0] = 1.0
        H = (basis.m - 1) // 2
        for k in range(1, H + 1):
            w = 2.0 * np.pi * k * s / S
            out[2 * k - 1] = np.sin(w)
            out[2 * k] = np.cos(w)
    elif basis.kind == "polynomial":
        out[:] = s ** np.arange(basis.m)
    else:  # chebyshev on s rescaled to [-1, 1]
        t = 2.0 * s / S - 1.0
        out[0] = 1.0
        if basis.m > 1:
            out[1] = t
        for j in range(2, basis.m):
            out[j] = 2.0 * t * out[j - 1] - out[j - 2]
    return out


@dataclass
class Constant:
    """Depth-invariant parameters."""

    theta: ParamVector

    @property
    def n_theta(self) -> int:
        return len(self.theta)

    @property
    def grad_dim(self) -> int:
        return self.n_theta

    def span_check(self, s: float, S: float):
        if s < -1e-12 or s > S + 1e-12:
            raise DepthDomainError(f"depth {s} outside [0, {S}]")


@dataclass
class Galerkin:
    """Spectral expansion theta(s) = sum_j alpha[j] * psi_j(s)."""

    basis: BasisSet
    alpha: np.ndarray  # (m, n_theta)
    layout: tuple = ()

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 2 or self.alpha.shape[0] != self.basis.m:
            raise ValueError(
                f"alpha must be (m, n_theta) with m={self.basis.m}, got {self.alpha.shape}"
            )

    @property
    def n_theta(self) -> int:
        return self.alpha.shape[1]

    @property
    def grad_dim(self) -> int:
        return self.alpha.size


@dataclass
class Stacked:
    """Piecewise-constant theta(s) on a strictly increasing depth grid."""

    grid: np.ndarray  # (p+1,), grid[0] = 0, grid[-1] = S
    thetas: list  # p ParamVectors

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 1 or self.grid.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if len(self.thetas) != self.grid.size - 1:
            raise ValueError(
                f"{self.grid.size - 1} segments but {len(self.thetas)} parameter vectors"
            )
        n = len(self.thetas[0])
        if any(len(t) != n for t in self.thetas):
            raise ValueError("all segment parameter vectors must share a length")

    @property
    def p(self) -> int:
        return len(self.thetas)

    @property
    def n_theta(self) -> int:
        return len(self.thetas[0])

    @property
    def grad_dim(self) -> int:
        return self.p * self.n_theta


DepthParametrization = Constant | Galerkin | Stacked


def segment_index(param: Stacked, s: float) -> int:
    """Segment owning depth s: right-open everywhere but the terminal point."""
    grid = param.grid
    if s < grid[0] - 1e-12 or s > grid[-1] + 1e-12:
        raise DepthDomainError(f"depth {s} outside [{grid[0]}, {grid[-1]}]")
    if s >= grid[-1]:
        return param.p - 1
    i = int(np.searchsorted(grid, s, side="right")) - 1
    return min(max(i, 0), param.p - 1)


def eval_theta(param: DepthParametrization, s: float, periodic: bool = False) -> np.ndarray:
    """Instantaneous parameter vector theta(s)."""
    if isinstance(param, Constant):
        return param.theta.values
    if isinstance(param, Galerkin):
        psi = basis_eval(param.basis, s, periodic=periodic)
        return psi @ param.alpha
    return param.thetas[segment_index(param, s)].values


def param_coefficients(param: DepthParametrization) -> np.ndarray:
    """Trainable coefficients as one flat array (native order)."""
    if isinstance(param, Constant):
        return param.theta.values
    if isinstance(param, Galerkin):
        return param.alpha.ravel()
    return np.concatenate([t.values for t in param.thetas])


def set_param_coefficients(param: DepthParametrization, values: np.ndarray) -> None:
    """Write a flat coefficient array back into the parametrization."""
    values = np.asarray(values, dtype=np.float64)
    if isinstance(param, Constant):
        param.theta.values[:] = values
    elif isinstance(param, Galerkin):
        param.alpha[:] = values.reshape(param.alpha.shape)
    else:
        n = param.n_theta
        for i, t in enumerate(param.thetas):
            t.values[:] = values[i * n : (i + 1) * n]


def depth_spans(param: DepthParametrization, s0: float, s1: float) -> list[tuple[float, float]]:
    """Split (s0, s1) at the parametrization's discontinuities.

    Stacked profiles jump at interior grid points, so integrations stop
    there; Constant and Galerkin are smooth and keep the span whole.
    Supports either integration direction.
    """
    if not isinstance(param, Stacked) or s0 == s1:
        return [(s0, s1)]
    interior = [g for g in param.grid[1:-1]]
    if s0 < s1:
        cuts = [g for g in interior if s0 < g < s1]
    else:
        cuts = [g for g in sorted(interior, reverse=True) if s1 < g < s0]
    points = [s0] + cuts + [s1]
    return [(points[i], points[i + 1]) for i in range(len(points) - 1)]
