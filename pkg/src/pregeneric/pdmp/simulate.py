"""Continuous-space PDMP trajectory simulation and diagnostics.

The event loop lives in a kernel with two interchangeable implementations:
a Cython extension (preferred) and a pure-Python twin, selected at import.
Both consume affine coefficient data for the flow gradient and the bounce
direction field, covering the quadratic / tilted-quadratic model family
exactly; see `PdmpSpec.affine`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError
from ..statespace import Density, StateSpace, normalize

try:  # compiled kernel; pure fallback keeps everything functional
    from . import _kernel_cy as _kernel

    KERNEL = "cython"
except ImportError:  # pragma: no cover - depends on build environment
    from . import _kernel_py as _kernel

    KERNEL = "python"

from . import _kernel_py

REFRESH = _kernel_py.REFRESH
BOUNCE = _kernel_py.BOUNCE


@dataclass
class PdmpSpec:
    """Simulation spec: affine flow gradient, refresh rate, bounce field.

    grad V_flow(x) = Gf x + gf0 drives the deterministic Hamiltonian flow
    (the auxiliary potential when a bounce channel is present), and
    grad U_tilde(x) = Gu x + gu0 defines the bounce rate (v . grad U_tilde)_+
    and reflection.  Set Gu = 0, gu0 = 0 for a pure Andersen thermostat.
    """

    d: int
    Gf: np.ndarray
    gf0: np.ndarray
    Gu: np.ndarray
    gu0: np.ndarray
    refresh_rate: float = 1.0
    rng_seed: int = 0
    h_flow: float = 0.01
    window_max: float = 1.0

    def __post_init__(self):
        if self.refresh_rate < 0:
            raise ValueError("refresh_rate must be nonnegative")
        self.Gf = np.asarray(self.Gf, float).reshape(self.d, self.d)
        self.Gu = np.asarray(self.Gu, float).reshape(self.d, self.d)
        self.gf0 = np.asarray(self.gf0, float).reshape(self.d)
        self.gu0 = np.asarray(self.gu0, float).reshape(self.d)
        for arr in (self.Gf, self.Gu, self.gf0, self.gu0):
            if not np.all(np.isfinite(arr)):
                raise ValueError("affine coefficients must be finite")

    @property
    def bounce_active(self) -> bool:
        return bool(np.any(self.Gu != 0) or np.any(self.gu0 != 0))

    @staticmethod
    def quadratic(k: float = 1.0, tilt: float = 0.0, refresh_rate: float = 1.0, seed: int = 0, **kw) -> "PdmpSpec":
        """1-d V = k x^2 / 2 with U_tilde = tilt * x (V_tilde = V - tilt x)."""
        return PdmpSpec(
            d=1,
            Gf=[[k]],
            gf0=[-tilt],
            Gu=[[0.0]],
            gu0=[tilt],
            refresh_rate=refresh_rate,
            rng_seed=seed,
            **kw,
        )


@dataclass
class Trajectory:
    """Events plus a uniformly sampled skeleton of one PDMP path."""

    spec: PdmpSpec
    total_time: float
    skeleton_dt: float
    skeleton: np.ndarray  # (n, 2d): x columns then v columns
    events: list  # (t, kind, before, after)
    seed: int
    n_bound_violations: int = 0

    @property
    def d(self) -> int:
        return self.skeleton.shape[1] // 2

    @property
    def skeleton_times(self) -> np.ndarray:
        return self.skeleton_dt * np.arange(self.skeleton.shape[0])

    def events_of(self, kind: int) -> list:
        return [e for e in self.events if e[1] == kind]


def simulate(spec: PdmpSpec, z0, T: float, skeleton_dt: float = 0.05) -> Trajectory:
    """Run the event loop from z0 = (x0..., v0...) up to time T."""
    z0 = np.asarray(z0, float).ravel()
    if z0.shape != (2 * spec.d,):
        raise ValueError("z0 must contain d positions then d velocities")
    skel, events, viol = _kernel.run_pdmp(
        spec.rng_seed,
        spec.d,
        z0[: spec.d],
        z0[spec.d :],
        float(T),
        float(spec.refresh_rate),
        spec.Gf,
        spec.gf0,
        spec.bounce_active,
        spec.Gu,
        spec.gu0,
        float(spec.h_flow),
        float(skeleton_dt),
        float(spec.window_max),
    )
    skel = np.asarray(skel, float)
    times = [e[0] for e in events]
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        raise ConvergenceError("event times are not strictly increasing")
    return Trajectory(
        spec=spec,
        total_time=float(T),
        skeleton_dt=float(skeleton_dt),
        skeleton=skel,
        events=events,
        seed=spec.rng_seed,
        n_bound_violations=int(viol),
    )


def empirical_density(traj_or_skeleton, grid: StateSpace, burn_in: float = 0.0) -> Density:
    """Occupation histogram of the skeleton binned to a grid (cells centered
    at the grid nodes).  Out-of-domain samples are dropped; an all-outside
    skeleton is an error."""
    skel = traj_or_skeleton.skeleton if hasattr(traj_or_skeleton, "skeleton") else np.asarray(traj_or_skeleton)
    if skel.size == 0:
        raise ValueError("empty skeleton")
    n0 = int(burn_in * skel.shape[0])
    pts = skel[n0:]
    if grid.kind != "grid" or grid.dim != pts.shape[1]:
        raise ValueError("binning grid dimension mismatch")
    idx = np.zeros(pts.shape[0], dtype=np.int64)
    inside = np.ones(pts.shape[0], dtype=bool)
    for k, ax in enumerate(grid.axes):
        pos = np.round((pts[:, k] - ax.lo) / ax.spacing).astype(np.int64)
        inside &= (pos >= 0) & (pos < ax.n)
        idx = idx * ax.n + np.clip(pos, 0, ax.n - 1)
    idx = idx[inside]
    if idx.size == 0:
        raise ValueError("all skeleton samples fall outside the binning grid")
    counts = np.bincount(idx, minlength=grid.n).astype(float)
    return normalize(Density(grid, counts / grid.weights))


def binned_density(grid: StateSpace, fn) -> Density:
    """Reference density on a binning grid from pointwise values of fn."""
    vals = np.asarray(fn(grid.points), float)
    return normalize(Density(grid, vals))


def total_variation(p: Density, q: Density) -> float:
    p.space.require_same(q.space)
    return 0.5 * float(np.sum(np.abs(p.values - q.values) * p.space.weights))


def _energy_distance(X: np.ndarray, Y: np.ndarray) -> float:
    from scipy.spatial.distance import cdist

    dxy = cdist(X, Y).mean()
    dxx = cdist(X, X).mean()
    dyy = cdist(Y, Y).mean()
    return 2.0 * dxy - dxx - dyy


def reversal_statistic(
    traj,
    flip,
    lag: float,
    burn_in: float = 0.1,
    max_pairs: int = 512,
    n_permutations: int = 200,
    level: float = 0.01,
    seed: int = 0,
) -> dict:
    """Pathwise check of generalized reversibility up to a state flip.

    Compares the empirical law of (z_t, z_{t+lag}) with that of
    (flip(z_{t+lag}), flip(z_t)) by energy distance, thresholded by a
    permutation test at the given level.  Pairs are thinned to roughly
    decorrelate; this is a diagnostic, not an exact test.
    """
    skel = traj.skeleton
    dt = traj.skeleton_dt
    shift = max(1, int(round(lag / dt))) if lag > 0 else 0
    n0 = int(burn_in * skel.shape[0])
    z = skel[n0:]
    n_pairs_avail = z.shape[0] - shift
    if n_pairs_avail < 1000:
        raise ValueError("insufficient samples for the reversal statistic (need >= 1000 pairs)")
    stride = max(1, n_pairs_avail // max_pairs)
    first = z[: n_pairs_avail : stride]
    second = z[shift : shift + n_pairs_avail : stride]
    m = min(len(first), len(second))
    first, second = first[:m], second[:m]

    X = np.hstack([first, second])
    flipped_second = np.apply_along_axis(flip, 1, second)
    flipped_first = np.apply_along_axis(flip, 1, first)
    Y = np.hstack([flipped_second, flipped_first])

    stat = _energy_distance(X, Y)
    rng = np.random.default_rng(seed)
    pool = np.vstack([X, Y])
    n = X.shape[0]
    perm_stats = np.empty(n_permutations)
    for b in range(n_permutations):
        perm = rng.permutation(pool.shape[0])
        perm_stats[b] = _energy_distance(pool[perm[:n]], pool[perm[n:]])
    threshold = float(np.quantile(perm_stats, 1.0 - level))
    p_value = float((np.sum(perm_stats >= stat) + 1) / (n_permutations + 1))
    return {
        "distance": float(stat),
        "threshold": threshold,
        "p_value": p_value,
        "pass": bool(stat <= threshold),
        "n_pairs": int(m),
        "level": level,
    }


def ergodic_average(traj, f, n_batches: int = 100, burn_in: float = 0.0) -> dict:
    """Time average of f over the skeleton with batch-means standard error."""
    skel = traj.skeleton
    n0 = int(burn_in * skel.shape[0])
    vals = np.asarray([f(z) for z in skel[n0:]], float)
    if vals.size < n_batches:
        raise ValueError(f"skeleton too short for {n_batches} batches")
    usable = (vals.size // n_batches) * n_batches
    bm = vals[:usable].reshape(n_batches, -1).mean(axis=1)
    return {
        "mean": float(vals.mean()),
        "batch_means_se": float(bm.std(ddof=1) / math.sqrt(n_batches)),
        "n_samples": int(vals.size),
        "n_batches": n_batches,
    }


def velocity_flip_map(d: int):
    def flip(z):
        out = np.array(z, float)
        out[d:] = -out[d:]
        return out

    return flip


def langevin_reference(
    dV,
    gamma: float = 1.0,
    T: float = 1000.0,
    dt: float = 0.01,
    seed: int = 0,
    z0=(0.0, 0.0),
    skeleton_every: int = 5,
) -> Trajectory:
    """Kinetic Langevin (BAOAB) reference trajectory for pathwise checks."""
    rng = np.random.default_rng(seed)
    x, v = float(z0[0]), float(z0[1])
    n = int(T / dt)
    c1 = math.exp(-gamma * dt)
    c2 = math.sqrt(1.0 - c1 * c1)
    skel = []
    for k in range(n + 1):
        if k % skeleton_every == 0:
            skel.append((x, v))
        v -= 0.5 * dt * dV(x)
        x += 0.5 * dt * v
        v = c1 * v + c2 * rng.standard_normal()
        x += 0.5 * dt * v
        v -= 0.5 * dt * dV(x)
    spec = PdmpSpec.quadratic(refresh_rate=0.0, seed=seed)
    return Trajectory(
        spec=spec,
        total_time=T,
        skeleton_dt=dt * skeleton_every,
        skeleton=np.asarray(skel),
        events=[],
        seed=seed,
    )
