"""Feng-Kurtz Hamiltonians, dissipation potentials and Legendre transforms.

All Hamiltonians are evaluated in the jump/difference form

    H(rho; xi) = sum_i rho_i w_i sum_j L_ij (exp(xi_j - xi_i) - 1),

never as exp(-xi) L exp(xi) literally: the difference form is overflow-safe
and makes invariance under constant shifts of xi exact.  Entropy-shifted
evaluations absorb log(rho/mu) into the exponent the same way, so the
additive normalization constant in dS cancels identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .errors import PositivityError, StructureError
from .generic import EntropyFunctional
from .opalg import CheckReport, Involution, LinOp, adjoint_l2, adjoint_l2mu, split_sym_antisym
from .statespace import Density, ScalarField, dot

XI_OVERFLOW_GUARD = 700.0
LEGENDRE_SIZE_CAP = 4096


def _values(x) -> np.ndarray:
    return x.values if hasattr(x, "values") else np.asarray(x, float)


def _check_xi(xi: np.ndarray):
    if np.max(np.abs(xi)) > XI_OVERFLOW_GUARD:
        raise ValueError(f"|xi| exceeds the overflow guard {XI_OVERFLOW_GUARD}")


def _jump_terms(L: LinOp, xi: np.ndarray, log_ratio: np.ndarray | None = None) -> sp.coo_matrix:
    """COO matrix with entries L_ij (exp(d_ij) - 1), d = xi_j - xi_i (+ shift).

    log_ratio, when given, is added to the exponent differences; used for
    entropy-shifted Hamiltonians where d_ij += r_j - r_i.
    """
    coo = L.matrix.tocoo()
    d = xi[coo.col] - xi[coo.row]
    if log_ratio is not None:
        d = d + (log_ratio[coo.col] - log_ratio[coo.row])
    vals = coo.data * np.expm1(d)
    return sp.coo_matrix((vals, (coo.row, coo.col)), shape=coo.shape)


def hamiltonian_eval(L: LinOp, rho: Density, xi) -> float:
    """H(rho; xi) = int exp(-xi) (L exp(xi)) drho, in the jump form."""
    L.space.require_same(rho.space)
    xi = _values(xi)
    _check_xi(xi)
    m = rho.values * rho.space.weights
    terms = _jump_terms(L, xi)
    return float(m @ np.asarray(terms.sum(axis=1)).ravel())


def hamiltonian_grad_xi(L: LinOp, rho: Density, xi) -> np.ndarray:
    """Gradient field of H in xi under the weighted pairing <f, g> = sum f g w."""
    xi = _values(xi)
    _check_xi(xi)
    coo = L.matrix.tocoo()
    e = coo.data * np.exp(xi[coo.col] - xi[coo.row])
    m = rho.values * rho.space.weights
    flux_in = np.zeros(L.space.n)
    flux_out = np.zeros(L.space.n)
    np.add.at(flux_in, coo.col, e * m[coo.row])
    np.add.at(flux_out, coo.row, e * m[coo.row])
    return (flux_in - flux_out) / L.space.weights


@dataclass
class Hamiltonian:
    """Evaluable H(rho; xi) attached to a generator matrix."""

    L: LinOp
    generator_warning: bool = False

    def __post_init__(self):
        self.generator_warning = self.L.constant_defect() > 1e-10 * self.L.scale()

    def __call__(self, rho: Density, xi) -> float:
        return hamiltonian_eval(self.L, rho, xi)

    def grad_xi(self, rho: Density, xi) -> np.ndarray:
        return hamiltonian_grad_xi(self.L, rho, xi)


def hamiltonian_split(L: LinOp, mu: Density) -> tuple[Hamiltonian, Hamiltonian]:
    """(H_s, H_a) built from the symmetric/antisymmetric parts of L in L2_mu."""
    Ls, La = split_sym_antisym(L, mu)
    return Hamiltonian(Ls), Hamiltonian(La)


@dataclass
class LegendreResult:
    value: float
    maximizer: np.ndarray
    status: str  # converged | maxiter | unbounded
    grad_norm: float
    iterations: int

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def legendre_transform(
    phi: Callable[[Density, np.ndarray], float],
    rho: Density,
    g,
    grad_phi: Callable[[Density, np.ndarray], np.ndarray] | None = None,
    x0: np.ndarray | None = None,
    gtol: float = 1e-9,
    maxiter: int = 500,
) -> LegendreResult:
    """sup over xi of <xi, g> - phi(rho; xi) by quasi-Newton ascent from 0.

    phi must be convex in xi (caller-asserted; see convexity_check).  The
    weighted pairing is used throughout, so the raw gradient passed to the
    optimizer carries the quadrature weights.  Divergence (value growth
    without gradient decay) is reported as status "unbounded".
    """
    n = rho.space.n
    if n > LEGENDRE_SIZE_CAP:
        raise ValueError(f"state space too large for the Legendre transform (n={n})")
    g = _values(g)
    w = rho.space.weights
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, float)
    hit_guard = [False]

    def _objective(xi):
        # minimize phi - <xi, g>; divergence is caught by the overflow guard
        if np.max(np.abs(xi)) > XI_OVERFLOW_GUARD / 2:
            hit_guard[0] = True
            return None
        return phi(rho, xi) - float(np.sum(xi * g * w))

    if grad_phi is None:
        def fun(xi):
            val = _objective(xi)
            return 1e300 if val is None else val
        kw = {"jac": None}
    else:
        def fun(xi):
            val = _objective(xi)
            if val is None:
                return 1e300, np.zeros(n)
            return val, (grad_phi(rho, xi) - g) * w
        kw = {"jac": True}

    res = minimize(fun, x0, method="L-BFGS-B", options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-16}, **kw)
    value = -float(res.fun)
    gnorm = float(np.max(np.abs(res.jac))) if res.jac is not None else np.inf
    if hit_guard[0] or value > 1e12 or np.max(np.abs(res.x)) > XI_OVERFLOW_GUARD / 4:
        status = "unbounded"
    elif gnorm <= max(gtol, 1e-7):
        status = "converged"
    else:
        status = "maxiter"
    return LegendreResult(value, res.x, status, gnorm, int(res.nit))


@dataclass
class DissipationPotential:
    """Legendre pair (psi, psi*) with gradient support in the second slot."""

    psi_star: Callable[[Density, np.ndarray], float]
    grad_psi_star: Callable[[Density, np.ndarray], np.ndarray]
    symmetric: bool = True
    label: str = ""

    def psi(self, rho: Density, v, **legendre_kw) -> float:
        """psi(rho; v) = sup_xi <xi, v> - psi*(rho; xi), numerically."""
        res = legendre_transform(self.psi_star, rho, v, grad_phi=self.grad_psi_star, **legendre_kw)
        return res.value

    def validate(self, rho: Density, rng: np.random.Generator, n_probe: int = 20, tol: float = 1e-10) -> dict:
        zero = np.zeros(rho.space.n)
        at_zero = abs(self.psi_star(rho, zero))
        min_val, sym = np.inf, 0.0
        for _ in range(n_probe):
            xi = rng.standard_normal(rho.space.n)
            v = self.psi_star(rho, xi)
            min_val = min(min_val, v)
            if self.symmetric:
                sym = max(sym, abs(v - self.psi_star(rho, -xi)) / max(abs(v), 1.0))
        return {
            "zero_at_zero": at_zero,
            "min_value": min_val,
            "symmetry_defect": sym,
            "pass": at_zero <= tol and min_val >= -tol and sym <= tol,
        }


def dissipation_from_Hs(Ls: LinOp, mu: Density, tol_sym: float = 1e-10) -> DissipationPotential:
    """Dissipation potential of a symmetric generator part,

        Psi*(rho; xi) = H_s(rho; dS/2 + xi) - H_s(rho; dS/2),

    evaluated through the symmetric kernel s_ij = w_i (Ls)_ij sqrt(mu_i/mu_j):

        Psi*(rho; xi) = sum_{i != j} s_ij sqrt(rho_i rho_j) (exp(xi_j - xi_i) - 1),

    which makes Psi*(rho; .) even exactly and cancels the additive constant
    in dS identically.  Requires Ls symmetric in L2_mu; the defect of
    Ls* = Ls is measured and the build refuses above tol_sym.
    """
    Ls.space.require_same(mu.space)
    mu.require_positive()
    Lstar = adjoint_l2mu(Ls, mu)
    diff = (Lstar.matrix - Ls.matrix).tocoo()
    sym_defect = float(np.max(np.abs(diff.data)) / Ls.scale()) if diff.data.size else 0.0
    if sym_defect > tol_sym:
        raise StructureError(f"Ls symmetry defect {sym_defect:g} exceeds {tol_sym:g}")

    coo = Ls.matrix.tocoo()
    off = coo.row != coo.col
    row, col = coo.row[off], coo.col[off]
    w = Ls.space.weights
    s_data = w[row] * coo.data[off] * np.sqrt(mu.values[row] / mu.values[col])
    n = Ls.space.n

    def psi_star(rho: Density, xi) -> float:
        xi = _values(xi)
        _check_xi(xi)
        rho.require_positive()
        q = np.sqrt(rho.values)
        return float(np.sum(s_data * q[row] * q[col] * np.expm1(xi[col] - xi[row])))

    def grad_psi_star(rho: Density, xi) -> np.ndarray:
        xi = _values(xi)
        _check_xi(xi)
        q = np.sqrt(rho.values)
        e = s_data * q[row] * q[col] * np.exp(xi[col] - xi[row])
        out = np.zeros(n)
        np.add.at(out, col, e)
        np.add.at(out, row, -e)
        return out / w

    return DissipationPotential(psi_star, grad_psi_star, symmetric=True, label="Psi*")


def quadratic_potential(M_builder: Callable[[Density], LinOp]) -> DissipationPotential:
    """Quadratic pair psi*(rho; xi) = <xi, M_rho xi>/2 with closed-form dual."""

    def psi_star(rho: Density, xi) -> float:
        xi = _values(xi)
        M = M_builder(rho)
        return 0.5 * dot(rho.space, xi, M.matrix @ xi)

    def grad_psi_star(rho: Density, xi) -> np.ndarray:
        return M_builder(rho).matrix @ _values(xi)

    pot = DissipationPotential(psi_star, grad_psi_star, symmetric=True, label="quadratic")

    def psi_closed(rho: Density, v) -> float:
        """<v, M^+ v>/2 on range(M); infinite off the range."""
        v = _values(v)
        M = M_builder(rho).dense()
        xi, *_ = np.linalg.lstsq(M, v, rcond=None)
        if np.linalg.norm(M @ xi - v) > 1e-8 * max(np.linalg.norm(v), 1.0):
            return np.inf
        return 0.5 * dot(rho.space, xi, v)

    pot.psi_closed = psi_closed
    return pot


def lagrangian_zero_check(L: LinOp, mu: Density, rho: Density, tol: float = 1e-7) -> CheckReport:
    """Lagrangian L(rho; L' rho) = 0: the Legendre transform of H at the
    Fokker-Planck velocity must vanish (maximizer xi = 0)."""
    g = adjoint_l2(L).apply(rho.values)
    res = legendre_transform(
        lambda r, xi: hamiltonian_eval(L, r, xi),
        rho,
        g,
        grad_phi=lambda r, xi: hamiltonian_grad_xi(L, r, xi),
    )
    metzler = bool(np.all(L.matrix.tocoo().data[L.matrix.tocoo().row != L.matrix.tocoo().col] >= 0))
    details = {"status": res.status, "grad_norm": res.grad_norm, "metzler": metzler}
    return CheckReport("lagrangian-zero", abs(res.value) <= tol and res.converged, abs(res.value), tol, details)


def shifted_hamiltonian_eval(L: LinOp, rho: Density, mu: Density, xi, shift: float = 1.0) -> float:
    """H(rho; shift * dS_mu(rho) + xi) via log-ratio differences (constant-free)."""
    xi = _values(xi)
    _check_xi(xi)
    rho.require_positive()
    mu.require_positive()
    log_ratio = shift * np.log(rho.values / mu.values)
    m = rho.values * rho.space.weights
    terms = _jump_terms(L, xi, log_ratio=log_ratio)
    return float(m @ np.asarray(terms.sum(axis=1)).ravel())


def check_reversibility_relation(
    L: LinOp,
    mu: Density,
    F: Involution,
    samples: int = 20,
    seed: int = 0,
    tol: float = 1e-10,
    rho_sampler: Callable[[np.random.Generator], Density] | None = None,
    xi_sampler: Callable[[np.random.Generator], np.ndarray] | None = None,
) -> CheckReport:
    """Hamiltonian form of (generalized) reversibility:

        H(rho; dS_mu(rho) + xi) = H(F# rho; -xi o F).

    With F = identity this is the detailed-balance relation for the
    Lagrangian, expressed on the H side.  Both sides are evaluated in
    difference form so the normalization constant in dS cancels exactly.
    """
    from .fields import perturbed_density, smooth_values

    rng = np.random.default_rng(seed)
    space = L.space
    if rho_sampler is None:
        rho_sampler = lambda r: perturbed_density(mu, r, amplitude=0.3)
    if xi_sampler is None:
        xi_sampler = lambda r: smooth_values(space, r, scale=0.5)

    max_defect = 0.0
    for _ in range(samples):
        rho = rho_sampler(rng)
        xi = xi_sampler(rng)
        lhs = shifted_hamiltonian_eval(L, rho, mu, xi, shift=1.0)
        rho_push = Density(space, F.pushforward(rho.values))
        xi_push = F.pushforward(xi)
        rhs = hamiltonian_eval(L, rho_push, -xi_push)
        defect = abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))
        max_defect = max(max_defect, defect)
    details = {"samples": samples, "seed": seed, "mu_invariance_defect": F.mu_invariance_defect(mu)}
    return CheckReport("reversibility-relation", max_defect <= tol, max_defect, tol, details)


def carre_du_champ(Ls: LinOp, xi, eta) -> ScalarField:
    """Gamma_s(xi, eta) = (Ls(xi eta) - xi Ls eta - eta Ls xi) / 2."""
    x, e = _values(xi), _values(eta)
    vals = 0.5 * (Ls.apply(x * e) - x * Ls.apply(e) - e * Ls.apply(x))
    return ScalarField(Ls.space, vals)


def convexity_check(
    Hs: Hamiltonian,
    samples: int = 200,
    seed: int = 0,
    tol: float = 1e-12,
    rho_sampler=None,
    xi_sampler=None,
) -> CheckReport:
    """First-order convexity gap of H_s in xi over random triples:

        gap = H_s(rho; xi + xibar) - H_s(rho; xi) - <dH_s(rho; xi), xibar>

    must be nonnegative; the minimum over samples is reported.
    """
    from .fields import random_positive_density, smooth_values

    rng = np.random.default_rng(seed)
    space = Hs.L.space
    if rho_sampler is None:
        rho_sampler = lambda r: random_positive_density(space, r)
    if xi_sampler is None:
        xi_sampler = lambda r: smooth_values(space, r, scale=0.7)

    min_gap = np.inf
    for _ in range(samples):
        rho = rho_sampler(rng)
        xi = xi_sampler(rng)
        xibar = xi_sampler(rng)
        lhs = Hs(rho, xi + xibar)
        rhs = Hs(rho, xi) + dot(space, Hs.grad_xi(rho, xi), xibar)
        min_gap = min(min_gap, lhs - rhs)
    return CheckReport(
        "Hs-convexity", min_gap >= -tol, max(-min_gap, 0.0), tol, {"min_gap": float(min_gap), "seed": seed}
    )
