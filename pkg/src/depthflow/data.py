"""Seeded synthetic dataset generators for the benchmark tasks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray  # (n, n_x)
    targets: np.ndarray  # (n, n_y)
    meta: dict = field(default_factory=dict)


def _disc(rng, n, r_lo, r_hi):
    """Uniform-in-area samples on the annulus r_lo <= ||x|| <= r_hi."""
    u = rng.uniform(size=n)
    radii = np.sqrt(u * (r_hi**2 - r_lo**2) + r_lo**2)
    ang = rng.uniform(0, 2 * np.pi, size=n)
    return np.stack([radii * np.cos(ang), radii * np.sin(ang)], axis=-1)


def make_dataset(name: str, n: int, seed: int = 0, **params) -> Dataset:
    """Build one of the named datasets with n samples."""
    rng = np.random.default_rng(seed)

    if name == "crossing":
        # equally spaced 1-D points mapped to their negation
        x = np.linspace(-1.0, 1.0, n)[:, None]
        return Dataset(name, x, -x)

    if name == "annuli":
        r = float(params.get("radius", 1.0))
        n_in = n // 2
        inner = _disc(rng, n_in, 0.0, 0.5 * r)
        outer = _disc(rng, n - n_in, 1.5 * r, 3.0 * r)
        x = np.concatenate([inner, outer])
        y = np.where(np.linalg.norm(x, axis=1) < r, -1.0, 1.0)[:, None]
        perm = rng.permutation(n)
        return Dataset(name, x[perm], y[perm], {"radius": r})

    if name == "moons":
        noise = float(params.get("noise", 0.08))
        n_a = n // 2
        ta = rng.uniform(0, np.pi, size=n_a)
        tb = rng.uniform(0, np.pi, size=n - n_a)
        a = np.stack([np.cos(ta), np.sin(ta)], axis=-1)
        b = np.stack([1.0 - np.cos(tb), 0.5 - np.sin(tb)], axis=-1)
        x = np.concatenate([a, b]) + rng.normal(0, noise, size=(n, 2))
        y = np.concatenate([-np.ones(n_a), np.ones(n - n_a)])[:, None]
        perm = rng.permutation(n)
        return Dataset(name, x[perm], y[perm], {"noise": noise})

    if name == "spirals":
        noise = float(params.get("noise", 0.05))
        turns = float(params.get("turns", 1.5))
        n_a = n // 2
        out = []
        labels = []
        for count, sign in ((n_a, -1.0), (n - n_a, 1.0)):
            t = np.sqrt(rng.uniform(0.05, 1.0, size=count)) * turns * 2 * np.pi
            arm = np.stack([t * np.cos(t), t * np.sin(t)], axis=-1) / (turns * 2 * np.pi)
            out.append(sign * arm + rng.normal(0, noise, size=(count, 2)))
            labels.append(np.full(count, sign))
        x = np.concatenate(out)
        y = np.concatenate(labels)[:, None]
        perm = rng.permutation(n)
        return Dataset(name, x[perm], y[perm], {"noise": noise, "turns": turns})

    if name == "tracking":
        # reference signal sampled on a depth grid (for reporting/plots;
        # the training loss evaluates the signal continuously in depth)
        s = np.linspace(0.0, 1.0, n)[:, None]
        beta = np.concatenate([np.sin(2 * np.pi * s), np.cos(2 * np.pi * s)], axis=1)
        return Dataset(name, s, beta)

    if name == "cnf-conditional":
        sigma = float(params.get("sigma", 0.3))
        priors = [(-1.0, sigma), (1.0, sigma)]
        targets = [(1.0, sigma), (-1.0, sigma)]
        n_a = n // 2
        draws = np.concatenate(
            [rng.normal(priors[0][0], sigma, n_a), rng.normal(priors[1][0], sigma, n - n_a)]
        )[:, None]
        labels = np.concatenate([np.zeros(n_a), np.ones(n - n_a)])[:, None]
        return Dataset(name, draws, labels, {"priors": priors, "targets": targets})

    raise ValueError(f"unknown dataset {name!r}")


def tracking_signal(s):
    """The 2-D periodic reference used by the tracking task."""
    return np.array([np.sin(2 * np.pi * s), np.cos(2 * np.pi * s)])
