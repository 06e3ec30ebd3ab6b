"""Discrete state spaces, quadrature weights, densities and inner products.

Two kinds of spaces are supported: plain finite-state sets (weights default
to 1) and truncated/periodic tensor-product grids with uniform spacing per
axis.  Grid weights are cell volumes: trapezoid-style on truncated axes
(half cells at the two ends), uniform on periodic axes.  All heavier
machinery (operators, entropies, Hamiltonians) is built on the two inner
products defined here: the flat L2 quadrature sum and the mu-weighted one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MassError, PositivityError, SpaceMismatchError

# Densities below this floor are treated as non-positive by log-taking ops.
POSITIVITY_FLOOR = 1e-300


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int
    boundary: str = "truncated"  # "truncated" | "periodic"

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("axis bounds must be finite")
        if self.hi <= self.lo:
            raise ValueError("axis needs hi > lo")
        if self.n < 2:
            raise ValueError("axis needs at least 2 points")
        if self.boundary not in ("truncated", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def spacing(self) -> float:
        if self.boundary == "periodic":
            return (self.hi - self.lo) / self.n
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(self.n)

    @property
    def cell_weights(self) -> np.ndarray:
        h = self.spacing
        w = np.full(self.n, h)
        if self.boundary == "truncated":
            w[0] = w[-1] = h / 2.0
        return w


@dataclass(frozen=True)
class StateSpace:
    """Finite-state set or tensor-product grid with quadrature weights.

    points has shape (n, d); weights has shape (n,) and is strictly
    positive.  For grids, flattening is C-order over the axes.
    """

    kind: str  # "finite" | "grid"
    points: np.ndarray
    weights: np.ndarray
    axes: tuple[Axis, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, float)))
        object.__setattr__(self, "weights", np.asarray(self.weights, float))
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points/weights length mismatch")
        if np.any(self.weights <= 0):
            raise ValueError("all quadrature weights must be strictly positive")
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        if self.kind != "grid":
            return (self.n,)
        return tuple(ax.n for ax in self.axes)

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def coordinate(self, k: int) -> np.ndarray:
        """Flattened k-th coordinate of every point."""
        return self.points[:, k]

    def same_as(self, other: "StateSpace") -> bool:
        return (
            self.kind == other.kind
            and self.shape == other.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def require_same(self, other: "StateSpace"):
        if self is other or self.same_as(other):
            return
        raise SpaceMismatchError("operands live on different state spaces")

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "weights": self.weights.tolist()}
        if self.kind == "grid":
            d["axes"] = [
                {"min": ax.lo, "max": ax.hi, "n": ax.n, "boundary": ax.boundary}
                for ax in self.axes
            ]
        else:
            d["points"] = self.points.tolist()
        return d

    @staticmethod
    def from_dict(d: dict) -> "StateSpace":
        if d["kind"] == "grid":
            return build_grid(d["axes"])
        sp = finite_space(len(d["weights"]), weights=np.asarray(d["weights"]))
        if "points" in d:
            return StateSpace("finite", np.asarray(d["points"]), sp.weights)
        return sp


def finite_space(n: int, weights: np.ndarray | None = None) -> StateSpace:
    """Finite-state space with unit (or explicit) weights; points are indices."""
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    pts = np.arange(n, dtype=float)[:, None]
    return StateSpace("finite", pts, w)


def build_grid(axes: Sequence[dict | Axis]) -> StateSpace:
    """Uniform tensor-product grid from per-axis {min, max, n, boundary} specs."""
    axs = tuple(
        ax if isinstance(ax, Axis) else Axis(ax["min"], ax["max"], ax["n"], ax.get("boundary", "truncated"))
        for ax in axes
    )
    grids = np.meshgrid(*[ax.points for ax in axs], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*[ax.cell_weights for ax in axs], indexing="ij")
    w = np.ones(pts.shape[0])
    for wg in wgrids:
        w = w * wg.ravel()
    return StateSpace("grid", pts, w, axs)


@dataclass(frozen=True)
class ScalarField:
    """Real-valued test function on a state space."""

    space: StateSpace
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != (self.space.n,):
            raise ValueError("field length does not match space")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)


@dataclass(frozen=True)
class Density:
    """Nonnegative weighted vector over a StateSpace; unit mass after normalize."""

    space: StateSpace
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != (self.space.n,):
            raise ValueError("density length does not match space")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        if np.any(v < 0):
            raise PositivityError("density values must be nonnegative")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def mass(self) -> float:
        return float(np.sum(self.values * self.space.weights))

    @property
    def min_value(self) -> float:
        return float(np.min(self.values))

    def require_positive(self, floor: float = POSITIVITY_FLOOR):
        if self.min_value < floor:
            raise PositivityError(
                f"density has values below the positivity floor (min={self.min_value:g})"
            )

    def as_field(self) -> ScalarField:
        return ScalarField(self.space, self.values)


def normalize(rho: Density) -> Density:
    m = rho.mass
    if m <= 0 or not np.isfinite(m):
        raise MassError(f"cannot normalize density with total mass {m:g}")
    return Density(rho.space, rho.values / m)


def density_from_values(space: StateSpace, values: np.ndarray) -> Density:
    """Clip tiny negative round-off to zero, then normalize."""
    v = np.asarray(values, float).copy()
    v[v < 0] = 0.0
    return normalize(Density(space, v))


def inner_product(f: ScalarField, g: ScalarField, weight: Density | None = None) -> float:
    """Quadrature pairing: sum f*g*w, optionally against a density weight.

    The elementwise product is formed in a fixed order before a single
    deterministic pairwise sum, so symmetry in (f, g) holds bit-for-bit.
    """
    f.space.require_same(g.space)
    prod = f.values * g.values * f.space.weights
    if weight is not None:
        f.space.require_same(weight.space)
        prod = prod * weight.values
    return float(np.sum(prod))


def dot(space: StateSpace, a: np.ndarray, b: np.ndarray, mu: np.ndarray | None = None) -> float:
    """Raw-array version of inner_product for internal use."""
    prod = a * b * space.weights
    if mu is not None:
        prod = prod * mu
    return float(np.sum(prod))


def norm_l2(space: StateSpace, a: np.ndarray, mu: np.ndarray | None = None) -> float:
    return float(np.sqrt(max(dot(space, a, a, mu), 0.0)))


def ratio_field(rho: Density, mu: Density) -> ScalarField:
    """Pointwise h = rho/mu; mu must be strictly positive."""
    rho.space.require_same(mu.space)
    mu.require_positive()
    return ScalarField(rho.space, rho.values / mu.values)


# -- import/export -------------------------------------------------------


def export_csv(path, space: StateSpace, values: np.ndarray | None = None):
    """Columns: index, coord_1..coord_d, weight, value."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        hdr = ["index"] + [f"coord_{k+1}" for k in range(space.dim)] + ["weight", "value"]
        wr.writerow(hdr)
        vals = np.zeros(space.n) if values is None else values
        for i in range(space.n):
            wr.writerow([i, *space.points[i].tolist(), space.weights[i], vals[i]])


def density_to_json(rho: Density) -> str:
    d = rho.space.to_dict()
    d["values"] = rho.values.tolist()
    return json.dumps(d, sort_keys=True)


def density_from_json(s: str) -> Density:
    d = json.loads(s)
    space = StateSpace.from_dict(d)
    return Density(space, np.asarray(d["values"]))
