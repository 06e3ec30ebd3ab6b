"""Seeded random test fields and densities.

Grid checks need test functions that exist independently of the mesh, so
that refining the mesh refines the *same* function: fields are sampled as
low-frequency random cosine mixtures with coefficients drawn from the seed,
then evaluated pointwise on whatever space is supplied.  Finite-state
spaces just get i.i.d. normals.
"""

from __future__ import annotations

import numpy as np

from .statespace import Density, ScalarField, StateSpace, normalize


def _cosine_mixture(rng: np.random.Generator, dim: int, n_modes: int, freq: float):
    amp = rng.normal(size=n_modes) / np.sqrt(n_modes)
    omega = rng.uniform(-freq, freq, size=(n_modes, dim))
    phase = rng.uniform(0.0, 2 * np.pi, size=n_modes)
    return amp, omega, phase


def smooth_values(
    space: StateSpace,
    rng: np.random.Generator,
    scale: float = 1.0,
    n_modes: int = 6,
    freq: float = 1.0,
) -> np.ndarray:
    """Values of a seeded smooth function evaluated at the space's points."""
    if space.kind != "grid":
        return scale * rng.standard_normal(space.n)
    amp, omega, phase = _cosine_mixture(rng, space.dim, n_modes, freq)
    z = space.points @ omega.T + phase  # (n, n_modes)
    return scale * (np.cos(z) @ amp)


def smooth_field(space: StateSpace, rng: np.random.Generator, scale: float = 1.0, **kw) -> ScalarField:
    return ScalarField(space, smooth_values(space, rng, scale, **kw))


def perturbed_density(
    base: Density,
    rng: np.random.Generator,
    amplitude: float = 0.25,
    freq: float = 1.0,
) -> Density:
    """Strictly positive density base * exp(small smooth field), normalized.

    Tails inherit the decay of `base`, which keeps log-ratios against the
    stationary measure polynomially bounded on truncated grids.
    """
    bump = smooth_values(base.space, rng, scale=amplitude, freq=freq)
    return normalize(Density(base.space, base.values * np.exp(bump)))


def random_positive_density(space: StateSpace, rng: np.random.Generator, amplitude: float = 0.5) -> Density:
    """Strictly positive density exp(field) on any space, normalized."""
    vals = np.exp(smooth_values(space, rng, scale=amplitude))
    return normalize(Density(space, vals))
