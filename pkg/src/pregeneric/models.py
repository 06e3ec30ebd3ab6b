"""Builders for the concrete dynamics: Ito diffusions, kinetic Fokker-Planck,
the Andersen thermostat, and the bounce-corrected Hamiltonian PD-MCMC.

Discretization policy.  Transport (Liouville) terms use second-order
centered differences with one-sided closures at truncated boundaries; jump
channels (momentum refresh, bounce/reflection) are exact finite-state
objects on the grid.  Structural identities are enforced at two levels:

* adjoint-based identities (splitting, symmetry of jump channels, the
  refresh operator being self-adjoint in L2_mu) hold to round-off, because
  adjoints are exact diagonal conjugations of transposes;
* stationarity of the grid-restricted analytic measure is pinned exactly —
  by a sparse velocity-flip-odd correction of consistency size (kinetic
  model), or by taking the transport as the exactly antisymmetric part of
  its raw discretization (jump models) — so the entropy and dissipation
  machinery downstream sees a generator whose kernel relations are exact.
  The raw stationarity residual is kept in the bundle metadata as the
  discretization-consistency metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import StructureError
from .generic import EntropyFunctional, HypocoerciveForm
from .hamiltonian import DissipationPotential, dissipation_from_Hs
from .opalg import Involution, LinOp, adjoint_l2, stationary_density
from .statespace import Axis, Density, ScalarField, StateSpace, build_grid, normalize


# -- potentials ------------------------------------------------------------


@dataclass
class PotentialSpec:
    """Target potential V with analytic gradient; optional auxiliary V_tilde.

    The bounce channel of the PD-MCMC uses U_tilde = V - V_tilde.
    """

    V: Callable[[np.ndarray], np.ndarray]
    dV: Callable[[np.ndarray], np.ndarray]
    V_tilde: Callable[[np.ndarray], np.ndarray] | None = None
    dV_tilde: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def dU_tilde(self, x: np.ndarray) -> np.ndarray:
        if self.dV_tilde is None:
            return np.zeros_like(self.dV(x))
        return np.asarray(self.dV(x)) - np.asarray(self.dV_tilde(x))

    def flow_grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient driving the deterministic flow (V_tilde when present)."""
        return self.dV(x) if self.dV_tilde is None else self.dV_tilde(x)

    def confinement_warning(self, lo: float, hi: float) -> str | None:
        xs = np.linspace(lo, hi, 101)
        v = self.V(xs)
        if min(v[0], v[-1]) < np.min(v) + 2.0:
            return "potential barely confining on the truncated domain"
        return None


def quadratic_potential_spec(k: float = 1.0) -> PotentialSpec:
    return PotentialSpec(V=lambda x: 0.5 * k * x**2, dV=lambda x: k * x, name=f"quadratic(k={k})")


def quartic_potential_spec(a: float = 0.25, b: float = 0.5) -> PotentialSpec:
    return PotentialSpec(V=lambda x: a * x**4 + b * x**2, dV=lambda x: 4 * a * x**3 + 2 * b * x, name="quartic")


def tilted_potential_spec(base: PotentialSpec, slope: float = 1.0) -> PotentialSpec:
    """Auxiliary V_tilde = V - slope*x, so grad U_tilde = slope (constant)."""
    return PotentialSpec(
        V=base.V,
        dV=base.dV,
        V_tilde=lambda x: base.V(x) - slope * x,
        dV_tilde=lambda x: base.dV(x) - slope,
        name=base.name + f"+tilt({slope})",
    )


# -- difference operators ----------------------------------------------------


def diff_1d(ax: Axis) -> sp.csr_matrix:
    """Centered first derivative; one-sided rows at truncated ends."""
    n, h = ax.n, ax.spacing
    if ax.boundary == "periodic":
        i = np.arange(n)
        rows = np.concatenate([i, i])
        cols = np.concatenate([(i + 1) % n, (i - 1) % n])
        vals = np.concatenate([np.full(n, 0.5 / h), np.full(n, -0.5 / h)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    d = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        d[i, i - 1] = -0.5 / h
        d[i, i + 1] = 0.5 / h
    d[0, 0], d[0, 1] = -1.0 / h, 1.0 / h
    d[n - 1, n - 1], d[n - 1, n - 2] = 1.0 / h, -1.0 / h
    return d.tocsr()


def axis_operator(space: StateSpace, k: int, d1: sp.csr_matrix | None = None) -> sp.csr_matrix:
    """Kronecker lift of a 1-d operator on axis k to the full grid."""
    if space.kind != "grid":
        raise ValueError("axis operators need a grid space")
    out = None
    for j, ax in enumerate(space.axes):
        m = (d1 if d1 is not None else diff_1d(ax)) if j == k else sp.identity(ax.n, format="csr")
        out = m if out is None else sp.kron(out, m, format="csr")
    return out.tocsr()


def gradient_ops(space: StateSpace) -> list[LinOp]:
    return [LinOp(space, axis_operator(space, k), label=f"d_{k}") for k in range(space.dim)]


def _axis_reversal(space: StateSpace, axes_to_flip: Sequence[int]) -> np.ndarray:
    idx = np.arange(space.n).reshape(space.shape)
    for k in axes_to_flip:
        idx = np.flip(idx, axis=k)
    return np.ascontiguousarray(idx).ravel()


def velocity_flip(space: StateSpace, v_axes: Sequence[int]) -> Involution:
    """(x, v) -> (x, -v) as an index involution; v-axes must be symmetric."""
    for k in v_axes:
        ax = space.axes[k]
        if abs(ax.lo + ax.hi) > 1e-12 * max(abs(ax.lo), abs(ax.hi), 1.0):
            raise ValueError(f"axis {k} is not symmetric about 0; velocity flip undefined")
        if ax.boundary != "truncated":
            raise ValueError("velocity axes must be truncated")
    return Involution(space, _axis_reversal(space, v_axes))


def _symmetrized_coordinate(space: StateSpace, k: int, flip: Involution) -> np.ndarray:
    """Coordinate array made exactly odd under the flip (kills fp asymmetry)."""
    v = space.coordinate(k)
    return 0.5 * (v - v[flip.permutation])


# -- bundles -----------------------------------------------------------------


@dataclass
class JumpStructure:
    """Metadata of the jump channels of a PDMP bundle."""

    rate: ScalarField  # bounce rate (v . grad U_tilde)_+
    reflection: Involution
    refresh_weights: Density  # pi_0 on the velocity marginal space
    a_field: ScalarField  # a(x, v) = v . grad U_tilde
    refresh_rate: float
    snap_error: float = 0.0

    def validate(self) -> dict:
        a = self.a_field.values
        lam = self.rate.values
        perm = self.reflection.permutation
        scale = max(float(np.max(np.abs(a))), 1.0)
        return {
            "rate_nonnegative": bool(np.all(lam >= 0)),
            "a_antisymmetry_defect": float(np.max(np.abs(a[perm] + a))) / scale,
            "complementary_rates_defect": float(np.max(lam * lam[perm])) / scale**2,
            "snap_error": self.snap_error,
        }


@dataclass
class ModelBundle:
    """Packaged model: generator, dual, stationary measure, structure parts."""

    L: LinOp
    L_dual: LinOp
    mu: Density
    hypo: HypocoerciveForm | None = None
    jump: JumpStructure | None = None
    flip: Involution | None = None
    parts: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def space(self) -> StateSpace:
        return self.L.space

    def entropy(self) -> EntropyFunctional:
        return EntropyFunctional(self.mu)

    def grid_tol(self, c: float = 5.0) -> float:
        """Default structural tolerance: c h^2 on grids, 1e-12 otherwise."""
        if self.space.kind != "grid":
            return 1e-12
        h = max(ax.spacing for ax in self.space.axes)
        return c * h * h

    def antisym_dual(self) -> LinOp:
        """Flat dual of the antisymmetric part (the conservative W of the flow)."""
        if "L_A_dual" in self.parts:
            return self.parts["L_A_dual"]
        if self.hypo is not None:
            return adjoint_l2(self.hypo.B)
        raise ValueError("bundle exposes no antisymmetric part")

    def validate(self, tol_structure: float | None = None, n_probe: int = 10, seed: int = 0) -> dict:
        from .fields import smooth_values
        from .statespace import norm_l2

        tol = self.grid_tol() if tol_structure is None else tol_structure
        scale = self.L.scale()
        stat = float(np.max(np.abs(self.L_dual.apply(self.mu.values)))) / scale
        const = self.L.constant_defect() / scale
        out = {"stationarity_defect": stat, "constant_defect": const, "tol_structure": tol}
        ok = stat <= tol and const <= tol
        if self.hypo is not None:
            rng = np.random.default_rng(seed)
            gen = self.hypo.generator()
            mu_w = self.space.weights * self.mu.values
            worst = 0.0
            for _ in range(n_probe):
                f = smooth_values(self.space, rng)
                d = self.L.apply(f) - gen.apply(f)
                ref = gen.apply(f)
                num = float(np.sqrt(np.sum(d * d * mu_w)))
                den = max(float(np.sqrt(np.sum(ref * ref * mu_w))), 1e-300)
                worst = max(worst, num / den)
            out["hypo_reconstruction_defect"] = worst
            ok = ok and worst <= tol
        if self.jump is not None:
            jrep = self.jump.validate()
            out["jump"] = jrep
            ok = ok and jrep["rate_nonnegative"] and jrep["a_antisymmetry_defect"] <= tol
        out["pass"] = bool(ok)
        return out


# -- Ito diffusions (elliptic case) ------------------------------------------


def _fv_fokker_planck_dual(space: StateSpace, b_vals: np.ndarray, D_vals: np.ndarray) -> sp.csr_matrix:
    """Conservative flux form of L' rho = div(D grad rho - b rho).

    Two-point fluxes per axis with centered face averages; off-diagonal D
    terms use face-averaged centered transverse derivatives.  No-flux at
    truncated ends, wrap-around on periodic axes.  Mass is conserved
    exactly (fluxes telescope).
    """
    shape = space.shape
    d = space.dim
    n = space.n
    idx = np.arange(n).reshape(shape)
    w = space.weights

    cent = [axis_operator(space, k) for k in range(d)]
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def accumulate(r, c, v):
        rows.append(np.asarray(r))
        cols.append(np.asarray(c))
        vals.append(np.asarray(v, float))

    axw = [space.axes[k].cell_weights for k in range(d)]

    for k in range(d):
        h = space.axes[k].spacing
        periodic = space.axes[k].boundary == "periodic"
        if periodic:
            left = idx.ravel()
            right = np.roll(idx, -1, axis=k).ravel()
        else:
            left = np.ascontiguousarray(idx.take(range(0, shape[k] - 1), axis=k)).ravel()
            right = np.ascontiguousarray(idx.take(range(1, shape[k]), axis=k)).ravel()

        # Transverse face area: product of the other axes' cell weights.
        area = np.ones(shape)
        for l in range(d):
            if l == k:
                continue
            sh = [1] * d
            sh[l] = shape[l]
            area = area * axw[l].reshape(sh)
        area = area.ravel()
        face_area = 0.5 * (area[left] + area[right])

        Dkk_face = 0.5 * (D_vals[left, k, k] + D_vals[right, k, k])
        bk_face = 0.5 * (b_vals[left, k] + b_vals[right, k])
        cdiff = face_area * Dkk_face / h
        cadv = -0.5 * face_area * bk_face

        # F = cdiff (rho_R - rho_L) + cadv (rho_L + rho_R) is the flux
        # D d rho/dn - b rho through the face oriented along +k; the cell
        # balance d/dt int rho = F(right face) - F(left face) gives
        # M_left += F, M_right -= F.
        accumulate(left, right, cdiff + cadv)
        accumulate(left, left, -(cdiff - cadv))
        accumulate(right, right, -(cdiff + cadv))
        accumulate(right, left, cdiff - cadv)

        for l in range(d):
            if l == k:
                continue
            Dkl_face = 0.5 * (D_vals[left, k, l] + D_vals[right, k, l])
            if not np.any(Dkl_face):
                continue
            for cell in (left, right):
                sub = cent[l][cell].tocoo()  # rows: face ids, cols: grid pts
                f = 0.5 * face_area * Dkl_face
                contrib = f[sub.row] * sub.data
                accumulate(left[sub.row], sub.col, contrib)
                accumulate(right[sub.row], sub.col, -contrib)

    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return (sp.diags(1.0 / w) @ M).tocsr()


def ito_diffusion(
    b: Callable[[np.ndarray], np.ndarray],
    sigma: Callable[[np.ndarray], np.ndarray] | np.ndarray | float,
    grid: StateSpace,
) -> ModelBundle:
    """Elliptic diffusion dX = b dt + sqrt(2) sigma dW on a grid.

    The Fokker-Planck dual is assembled in conservative flux form, the
    generator is its exact flat adjoint, and mu is solved from the discrete
    kernel.  Hypocoercive parts follow the closed forms A = sigma^T grad
    and B = (b - D grad log mu) . grad.  sigma may be a scalar, a constant
    (d, m) matrix, or a callable returning (n, d, m).
    """
    if grid.kind != "grid":
        raise ValueError("ito_diffusion needs a grid space")
    pts = grid.points
    n, d = pts.shape
    b_vals = np.asarray(b(pts), float).reshape(n, d)
    if callable(sigma):
        s_vals = np.asarray(sigma(pts), float).reshape(n, d, -1)
    else:
        s_arr = np.asarray(sigma, float)
        if s_arr.ndim == 0:
            s_vals = np.tile(float(s_arr) * np.eye(d), (n, 1, 1))
        else:
            s_vals = np.tile(s_arr.reshape(d, -1), (n, 1, 1))
    D_vals = np.einsum("nij,nkj->nik", s_vals, s_vals)
    step = max(1, n // 512)
    min_eig = float(min(np.linalg.eigvalsh(D_vals[i]).min() for i in range(0, n, step)))
    if min_eig <= 0:
        raise StructureError(f"diffusion matrix not uniformly positive definite (min eig {min_eig:g})")

    # Cell Peclet |b_k| h_k / (2 D_kk) > 1 makes the centered advective flux
    # oscillatory (possibly negative kernel entries); report it.
    peclet = max(
        float(np.max(np.abs(b_vals[:, k]) * grid.axes[k].spacing / (2.0 * D_vals[:, k, k])))
        for k in range(d)
    )
    L_dual = LinOp(grid, _fv_fokker_planck_dual(grid, b_vals, D_vals), label="L'")
    L = adjoint_l2(L_dual)
    L.label = "L"
    mu = stationary_density(L)

    grads = gradient_ops(grid)
    A = []
    for j in range(s_vals.shape[2]):
        mat = None
        for i in range(d):
            term = sp.diags(s_vals[:, i, j]) @ grads[i].matrix
            mat = term if mat is None else mat + term
        A.append(LinOp(grid, mat, label=f"A_{j}"))

    log_mu = np.log(mu.values)
    grad_log_mu = np.stack([grads[i].apply(log_mu) for i in range(d)], axis=1)
    drift_B = b_vals - np.einsum("nij,nj->ni", D_vals, grad_log_mu)
    B_mat = None
    for i in range(d):
        term = sp.diags(drift_B[:, i]) @ grads[i].matrix
        B_mat = term if B_mat is None else B_mat + term
    B = LinOp(grid, B_mat, label="B")

    meta = {
        "name": "ito_diffusion",
        "min_diffusion_eig": min_eig,
        "max_cell_peclet": peclet,
        "stationarity_residual": float(np.max(np.abs(L_dual.apply(mu.values)))),
    }
    return ModelBundle(L=L, L_dual=L_dual, mu=mu, hypo=HypocoerciveForm(A=A, B=B, mu=mu), meta=meta)


# -- kinetic Fokker-Planck ----------------------------------------------------


def _product_gibbs(space: StateSpace, pot: PotentialSpec, x_axes, v_axes, flip: Involution) -> Density:
    """mu ~ exp(-V(x) - |v|^2/2) as an exact x/v product, flip-symmetrized."""
    x = space.points[:, list(x_axes)]
    V = np.asarray(pot.V(x[:, 0] if len(x_axes) == 1 else x), float)
    vsq = np.zeros(space.n)
    for k in v_axes:
        vk = _symmetrized_coordinate(space, k, flip)
        vsq += vk * vk
    logmu = -V - 0.5 * vsq
    logmu -= np.max(logmu)
    vals = np.exp(logmu)
    vals = 0.5 * (vals + vals[flip.permutation])
    return normalize(Density(space, vals))


def _dual_stationarity_pin(
    L_dual_raw: sp.csr_matrix, mu: Density, flip: Involution
) -> tuple[sp.csr_matrix, float]:
    """Subtract C = D_{r/mu} (I + P_flip) / 2 from the raw dual: the result
    kills mu exactly and still conserves mass exactly.  Requires the raw
    residual r to be flip-odd, which holds for flip-equivariant models."""
    r = L_dual_raw @ mu.values
    residual = float(np.max(np.abs(r)))
    odd_defect = float(np.max(np.abs(r[flip.permutation] + r)))
    if odd_defect > 1e-8 * max(residual, 1e-300):
        raise StructureError("stationarity residual is not flip-odd; cannot pin without losing mass")
    n = mu.space.n
    P = sp.csr_matrix((np.ones(n), (np.arange(n), flip.permutation)), shape=(n, n))
    C = 0.5 * sp.diags(r / mu.values) @ (sp.identity(n, format="csr") + P)
    return (L_dual_raw - C).tocsr(), residual


def kinetic_fokker_planck(pot: PotentialSpec, grid: StateSpace) -> ModelBundle:
    """Kinetic Langevin generator v d_x - V'(x) d_v - v d_v + d_v^2 on an
    (x, v) grid: hypocoercive parts A = d_v, B = v d_x - V'(x) d_v and
    mu ~ exp(-V - v^2/2).  The dual is pinned so L' mu = 0 exactly; the raw
    residual is kept as the consistency metric."""
    if grid.kind != "grid" or grid.dim != 2:
        raise ValueError("kinetic_fokker_planck needs a 2-axis (x, v) grid")
    flip = velocity_flip(grid, v_axes=[1])
    mu = _product_gibbs(grid, pot, x_axes=[0], v_axes=[1], flip=flip)

    x = grid.coordinate(0)
    v = _symmetrized_coordinate(grid, 1, flip)
    Dx = axis_operator(grid, 0)
    Dv = axis_operator(grid, 1)

    A = [LinOp(grid, Dv, label="A")]
    B = LinOp(grid, sp.diags(v) @ Dx - sp.diags(pot.dV(x)) @ Dv, label="B")
    hypo = HypocoerciveForm(A=A, B=B, mu=mu)

    L_dual_mat, residual = _dual_stationarity_pin(adjoint_l2(hypo.generator()).matrix, mu, flip)
    L_dual = LinOp(grid, L_dual_mat, label="L'")
    L = adjoint_l2(L_dual)
    L.label = "L"

    meta = {
        "name": "kinetic_fokker_planck",
        "potential": pot.name,
        "stationarity_residual": residual,
        "confinement_warning": pot.confinement_warning(grid.axes[0].lo, grid.axes[0].hi),
    }
    return ModelBundle(L=L, L_dual=L_dual, mu=mu, hypo=hypo, flip=flip, meta=meta)


# -- PDMP family: Andersen thermostat and Hamiltonian PD-MCMC -----------------


def _exact_antisymmetric_transport(T_raw: sp.csr_matrix, mu: Density, flip: Involution) -> LinOp:
    """Exactly L2_mu-antisymmetric, constant-annihilating version of a raw
    transport matrix: similarity antisymmetrization plus a sparse flip-odd
    kernel fix (K 1 = 0).  Shifts the raw matrix by consistency error only."""
    space = mu.space
    q = np.sqrt(space.weights * mu.values)
    S = sp.diags(q)
    Sinv = sp.diags(1.0 / q)
    C = (S @ T_raw @ Sinv).tocsr()
    Ca = 0.5 * (C - C.T)
    K0 = (Sinv @ Ca @ S).tocsr()
    dvec = K0 @ np.ones(space.n)
    odd_defect = float(np.max(np.abs(dvec[flip.permutation] + dvec)))
    if odd_defect > 1e-8 * max(float(np.max(np.abs(dvec))), 1e-300):
        raise StructureError("transport kernel defect is not flip-odd")
    n = space.n
    P = sp.csr_matrix((np.ones(n), (np.arange(n), flip.permutation)), shape=(n, n))
    Dd = sp.diags(dvec)
    corr = 0.5 * (Dd @ P - P @ Dd)
    return LinOp(space, (K0 - corr).tocsr(), label="K")


def _reflection_involution(
    space: StateSpace, v_axes: Sequence[int], dU: np.ndarray, snap_tol: float
) -> tuple[Involution, float]:
    """Index map of v -> v - 2 (v.g) g/|g|^2, snapped to grid nodes.

    Exact in the 1-d case; for d >= 2 the per-node snapping error is
    measured and the build refuses above snap_tol * h_v.
    """
    if len(v_axes) == 1:
        return Involution(space, _axis_reversal(space, v_axes)), 0.0

    shape = space.shape
    hv = min(space.axes[k].spacing for k in v_axes)
    v = space.points[:, list(v_axes)]
    g = dU
    gnorm2 = np.sum(g * g, axis=1)
    coef = np.zeros(space.n)
    nz = gnorm2 > 0
    coef[nz] = 2.0 * np.sum(v[nz] * g[nz], axis=1) / gnorm2[nz]
    target = v - coef[:, None] * g

    idx_nd = list(np.unravel_index(np.arange(space.n), shape))
    err = np.zeros(space.n)
    for j, k in enumerate(v_axes):
        ax = space.axes[k]
        pos = (target[:, j] - ax.lo) / ax.spacing
        snapped = np.clip(np.round(pos).astype(int), 0, ax.n - 1)
        err += (np.abs(snapped - pos) * ax.spacing) ** 2
        idx_nd[k] = snapped
    snap_error = float(np.max(np.sqrt(err)))
    if snap_error > snap_tol * hv:
        raise StructureError(
            f"reflection snapping error {snap_error:g} exceeds {snap_tol:g}*h_v={snap_tol * hv:g}"
        )
    perm = np.ravel_multi_index(tuple(idx_nd), shape)
    if not np.array_equal(perm[perm], np.arange(space.n)):
        raise StructureError("snapped reflection is not an involution; refine the velocity grid")
    return Involution(space, perm), snap_error


def _pdmp_bundle(pot: PotentialSpec, lambda_r: float, grid: StateSpace, name: str, snap_tol: float) -> ModelBundle:
    if grid.kind != "grid" or grid.dim % 2 != 0:
        raise ValueError("PDMP bundles need a grid with matching x/v axes")
    if lambda_r < 0:
        raise ValueError("refresh rate must be nonnegative")
    d = grid.dim // 2
    x_axes = list(range(d))
    v_axes = list(range(d, 2 * d))

    flip = velocity_flip(grid, v_axes=v_axes)
    mu = _product_gibbs(grid, pot, x_axes, v_axes, flip)

    nv = int(np.prod([grid.axes[k].n for k in v_axes]))
    nx = grid.n // nv
    v_space = build_grid([grid.axes[k] for k in v_axes])
    vsq = np.zeros(nv)
    for j in range(len(v_axes)):
        vk = v_space.coordinate(j)
        vk = 0.5 * (vk - vk[_axis_reversal(v_space, [j])])
        vsq += vk * vk
    pi0 = normalize(Density(v_space, np.exp(-0.5 * vsq)))
    pi0_w = pi0.values * v_space.weights

    vcoords = [_symmetrized_coordinate(grid, k, flip) for k in v_axes]
    T_raw = None
    for j in range(d):
        xj = grid.coordinate(x_axes[j])
        term = sp.diags(vcoords[j]) @ axis_operator(grid, x_axes[j])
        term = term - sp.diags(np.asarray(pot.flow_grad(xj), float)) @ axis_operator(grid, v_axes[j])
        T_raw = term if T_raw is None else T_raw + term

    xpts = grid.points[:, x_axes]
    dU = np.asarray(pot.dU_tilde(xpts[:, 0] if d == 1 else xpts), float).reshape(grid.n, d)
    a = np.zeros(grid.n)
    for j in range(d):
        a += vcoords[j] * dU[:, j]

    n = grid.n
    if np.any(a != 0):
        refl, snap_error = _reflection_involution(grid, v_axes, dU, snap_tol)
        P_R = refl.matrix()
        eye = sp.identity(n, format="csr")
        L_JA = (0.5 * sp.diags(a) @ (P_R - eye)).tocsr()
        L_JS = (0.5 * sp.diags(np.abs(a)) @ (P_R - eye)).tocsr()
    else:
        refl, snap_error = flip, 0.0
        L_JA = sp.csr_matrix((n, n))
        L_JS = sp.csr_matrix((n, n))

    K = _exact_antisymmetric_transport((T_raw + L_JA).tocsr(), mu, flip)
    ones_col = np.ones((nv, 1))
    Qt = sp.kron(sp.identity(nx, format="csr"), sp.csr_matrix(ones_col @ pi0_w[None, :]), format="csr")
    L_Q = (lambda_r * (Qt - sp.identity(n, format="csr"))).tocsr()

    L_S_mat = (L_Q + L_JS).tocsr()
    L = LinOp(grid, (K.matrix + L_S_mat).tocsr(), label="L")
    L_dual = adjoint_l2(L)
    L_dual.label = "L'"

    raw = LinOp(grid, (T_raw + L_JA + L_S_mat).tocsr())
    raw_residual = float(np.max(np.abs(adjoint_l2(raw).apply(mu.values))))

    jump = JumpStructure(
        rate=ScalarField(grid, np.maximum(a, 0.0)),
        reflection=refl,
        refresh_weights=pi0,
        a_field=ScalarField(grid, a),
        refresh_rate=lambda_r,
        snap_error=snap_error,
    )
    parts = {
        "transport": K,
        "refresh": LinOp(grid, L_Q, label="L_Q"),
        "bounce_sym": LinOp(grid, L_JS, label="L_JS"),
        "bounce_anti": LinOp(grid, L_JA, label="L_JA"),
        "L_S": LinOp(grid, L_S_mat, label="L_S"),
        "L_A": K,
        "L_A_dual": adjoint_l2(K),
    }
    meta = {
        "name": name,
        "potential": pot.name,
        "lambda_r": lambda_r,
        "stationarity_residual": raw_residual,
        "snap_error": snap_error,
    }
    return ModelBundle(L=L, L_dual=L_dual, mu=mu, jump=jump, flip=flip, parts=parts, meta=meta)


def andersen_thermostat(pot: PotentialSpec, lambda_r: float, grid: StateSpace) -> ModelBundle:
    """Hamiltonian flow of V plus momentum refresh at rate lambda_r."""
    if lambda_r <= 0:
        raise ValueError("Andersen thermostat needs lambda_r > 0")
    if pot.V_tilde is not None:
        raise ValueError("Andersen thermostat uses the target potential only")
    return _pdmp_bundle(pot, lambda_r, grid, name="andersen_thermostat", snap_tol=0.1)


def ham_pdmcmc(pot: PotentialSpec, lambda_r: float, grid: StateSpace, snap_tol: float = 0.1) -> ModelBundle:
    """Hamiltonian PD-MCMC: flow of V_tilde, refresh at rate lambda_r, and a
    bounce channel at rate (v . grad U_tilde)_+ restoring invariance of mu."""
    return _pdmp_bundle(pot, lambda_r, grid, name="ham_pdmcmc", snap_tol=snap_tol)


# -- PDMP dissipation potential ------------------------------------------------


def pdmp_dissipation_potential(bundle: ModelBundle) -> DissipationPotential:
    """Closed-form dissipation potential of the symmetric jump part:

        psi~*(rho; xi) = psi*_refresh + psi*_bounce,

    the BGK cosh form against sqrt(pi0(v) pi0(v')) plus the reflection cosh
    form against (a_+ + a_-)/2.  Gradient at xi = -dS/2 is L_S' rho; agrees
    with the Hamiltonian-difference potential of the symmetric part.
    """
    if bundle.jump is None:
        raise ValueError("bundle has no jump structure")
    space = bundle.space
    jump = bundle.jump
    lam_r = jump.refresh_rate
    v_space = jump.refresh_weights.space
    nv = v_space.n
    nx = space.n // nv
    w2 = space.weights.reshape(nx, nv)
    wv = v_space.weights
    wx = w2[:, 0] / wv[0]
    s_v = np.sqrt(jump.refresh_weights.values) * wv  # wv * sqrt(pi0)
    perm = jump.reflection.permutation
    absa = np.abs(jump.a_field.values)
    w = space.weights
    has_bounce = bool(np.any(absa > 0))

    def psi_star(rho: Density, xi) -> float:
        xiv = xi.values if hasattr(xi, "values") else np.asarray(xi, float)
        rho.require_positive()
        val = 0.0
        if lam_r > 0:
            q = np.sqrt(rho.values).reshape(nx, nv) * s_v[None, :]
            e = np.exp(xiv.reshape(nx, nv))
            P = np.sum(q / e, axis=1)
            Q = np.sum(q * e, axis=1)
            R = np.sum(q, axis=1)
            val += lam_r * float(np.sum(wx * (P * Q - R * R)))
        if has_bounce:
            sr = np.sqrt(rho.values * rho.values[perm])
            val += 0.5 * float(np.sum(w * absa * sr * (np.cosh(xiv[perm] - xiv) - 1.0)))
        return val

    def grad_psi_star(rho: Density, xi) -> np.ndarray:
        xiv = xi.values if hasattr(xi, "values") else np.asarray(xi, float)
        out = np.zeros(space.n)
        if lam_r > 0:
            q = np.sqrt(rho.values).reshape(nx, nv) * s_v[None, :]
            e = np.exp(xiv.reshape(nx, nv))
            P = np.sum(q / e, axis=1)
            Q = np.sum(q * e, axis=1)
            block = lam_r * wx[:, None] * q * (e * P[:, None] - Q[:, None] / e)
            out += (block / w2).ravel()
        if has_bounce:
            sr = np.sqrt(rho.values * rho.values[perm])
            out += absa * sr * np.sinh(xiv - xiv[perm])
        return out

    return DissipationPotential(psi_star, grad_psi_star, symmetric=True, label="psi~*")


def pdmp_theorem_potential(bundle: ModelBundle) -> DissipationPotential:
    """Dissipation potential of the symmetric part via the
    Hamiltonian-difference construction (cross-validation partner of
    pdmp_dissipation_potential)."""
    if "L_S" not in bundle.parts:
        raise ValueError("bundle does not expose its symmetric part")
    return dissipation_from_Hs(bundle.parts["L_S"], bundle.mu)
