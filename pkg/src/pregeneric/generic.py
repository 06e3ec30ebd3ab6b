"""Entropy functionals, Wasserstein-type dissipation operators, and the
two-way conversion between the hypocoercive form of a generator and the
pre-GENERIC form of its Fokker-Planck flow.

Conventions.  A hypocoercive form is the pair (A, B) with B antisymmetric
in L2_mu and the dissipative part -A*A; the corresponding pre-GENERIC data
is W = B' (the flat adjoint, which stands in for -B acting on densities),
the mobility M_rho(xi) = 2 sum_k A_k'(rho * A_k xi), and the relative
entropy against mu.  Structural facts (symmetry/PSD of M_rho, exactness of
adjoints) hold to round-off; chain-rule facts hold to O(h^2) on grids and
are measured, not assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import MassError, PositivityError, StructureError
from .opalg import LinOp, adjoint_l2, adjoint_l2mu
from .statespace import Density, ScalarField, StateSpace, dot, norm_l2


def relative_entropy(rho: Density, mu: Density, mass_tol: float = 1e-8) -> float:
    """S_mu(rho) = sum rho log(rho/mu) w, in nats; both inputs normalized."""
    rho.space.require_same(mu.space)
    rho.require_positive()
    mu.require_positive()
    for d, name in ((rho, "rho"), (mu, "mu")):
        if abs(d.mass - 1.0) > mass_tol:
            raise MassError(f"{name} has mass {d.mass!r}, expected 1")
    return dot(rho.space, rho.values, np.log(rho.values / mu.values))


def relative_entropy_safe(values: np.ndarray, mu: Density) -> float:
    """Relative entropy tolerating exact zeros (0 log 0 = 0); for monitors."""
    v = np.asarray(values, float)
    pos = v > 0
    out = np.zeros_like(v)
    out[pos] = v[pos] * np.log(v[pos] / mu.values[pos])
    return float(np.sum(out * mu.space.weights))


def entropy_gradient(rho: Density, mu: Density) -> ScalarField:
    """Variational derivative of S_mu at rho: log(rho/mu) + 1."""
    rho.space.require_same(mu.space)
    rho.require_positive()
    mu.require_positive()
    return ScalarField(rho.space, np.log(rho.values / mu.values) + 1.0)


@dataclass
class EntropyFunctional:
    """Relative entropy against a fixed reference measure."""

    mu: Density

    def value(self, rho: Density) -> float:
        return relative_entropy(rho, self.mu)

    def gradient(self, rho: Density) -> ScalarField:
        return entropy_gradient(rho, self.mu)

    def gradient_values(self, rho_values: np.ndarray) -> np.ndarray:
        return np.log(rho_values / self.mu.values) + 1.0


VectorOp = Sequence[LinOp]  # d_A component operators acting field -> field


def wasserstein_operator(A: VectorOp | LinOp, rho: Density) -> LinOp:
    """Mobility M_rho = 2 sum_k A_k' D_rho A_k; symmetric PSD in flat L2 exactly."""
    comps = [A] if isinstance(A, LinOp) else list(A)
    rho.require_positive()
    Dr = sp.diags(rho.values)
    m = None
    for Ak in comps:
        Ak.space.require_same(rho.space)
        term = 2.0 * (adjoint_l2(Ak).matrix @ Dr @ Ak.matrix)
        m = term if m is None else m + term
    return LinOp(rho.space, m, label="M_rho")


def msqrt_from_A(A: VectorOp | LinOp) -> Callable[[Density], list[LinOp]]:
    """Square-root factorization M_rho^(1/2) xi = sqrt(2 rho) A xi.

    Returned as a builder rho -> component list, the user-supplied structure
    expected by pregeneric_to_hypocoercive.
    """
    comps = [A] if isinstance(A, LinOp) else list(A)

    def build(rho: Density) -> list[LinOp]:
        s = sp.diags(np.sqrt(2.0 * rho.values))
        return [LinOp(Ak.space, s @ Ak.matrix, label="M_sqrt") for Ak in comps]

    return build


@dataclass
class HypocoerciveForm:
    """Generator data L = B - A*A with B antisymmetric in L2_mu."""

    A: list[LinOp]
    B: LinOp
    mu: Density

    def __post_init__(self):
        if isinstance(self.A, LinOp):
            self.A = [self.A]
        for Ak in self.A:
            Ak.space.require_same(self.mu.space)
        self.B.space.require_same(self.mu.space)

    @property
    def space(self) -> StateSpace:
        return self.B.space

    def dissipative_part(self) -> LinOp:
        """A*A = sum_k A_k* A_k, exactly symmetric PSD in L2_mu."""
        m = None
        for Ak in self.A:
            term = adjoint_l2mu(Ak, self.mu).matrix @ Ak.matrix
            m = term if m is None else m + term
        return LinOp(self.space, m, label="A*A")

    def generator(self) -> LinOp:
        return LinOp(self.space, self.B.matrix - self.dissipative_part().matrix, label="B-A*A")

    def validate(self, tol_antisym: float, tol_const: float) -> dict:
        """Measured invariants: B* = -B, A 1 = 0, B 1 = 0 (tolerances are the
        caller's: round-off scale for finite-state data, consistency scale
        on grids)."""
        Bstar = adjoint_l2mu(self.B, self.mu)
        anti = (Bstar.matrix + self.B.matrix).tocoo()
        anti_defect = float(np.max(np.abs(anti.data)) / self.B.scale()) if anti.data.size else 0.0
        const_B = self.B.constant_defect() / self.B.scale()
        const_A = max(Ak.constant_defect() / Ak.scale() for Ak in self.A)
        report = {
            "B_antisym_defect": anti_defect,
            "B_constant_defect": const_B,
            "A_constant_defect": const_A,
            "pass": anti_defect <= tol_antisym and const_B <= tol_const and const_A <= tol_const,
        }
        return report


@dataclass
class GenericStructure:
    """Pre-GENERIC data (W, M_rho, S) for a Fokker-Planck flow."""

    W: LinOp
    M_builder: Callable[[Density], LinOp]
    S: EntropyFunctional

    @property
    def space(self) -> StateSpace:
        return self.W.space

    def flow(self, rho: Density) -> np.ndarray:
        """Right-hand side W rho - M_rho(dS(rho)/2)."""
        M = self.M_builder(rho)
        g = self.S.gradient(rho).values
        return self.W.apply(rho.values) - 0.5 * (M.matrix @ g)

    def validate_mobility(self, rho: Density, tol: float = 1e-12, n_probe: int = 20, seed: int = 0) -> dict:
        """Symmetry and positive semidefiniteness of M_rho on probe fields."""
        M = self.M_builder(rho).matrix
        rng = np.random.default_rng(seed)
        w = self.space.weights
        sym, neg = 0.0, 0.0
        scale = max(np.abs(M).max(), 1e-300)
        for _ in range(n_probe):
            f = rng.standard_normal(self.space.n)
            g = rng.standard_normal(self.space.n)
            sym = max(sym, abs(dot(self.space, M @ f, g) - dot(self.space, f, M @ g)))
            neg = min(neg, dot(self.space, M @ g, g))
        nf = max(float(scale), 1.0)
        return {"symmetry_defect": sym / nf, "min_quadratic_form": neg, "pass": sym / nf <= tol and neg >= -tol}


def hypocoercive_to_pregeneric(H: HypocoerciveForm) -> GenericStructure:
    """Section-3 conversion: W = B', M_rho = 2A'(rho A .), S = S_mu."""
    W = adjoint_l2(H.B)
    W.label = "W"
    A = list(H.A)
    return GenericStructure(W=W, M_builder=lambda rho: wasserstein_operator(A, rho), S=EntropyFunctional(H.mu))


def reconstruction_defect(H: HypocoerciveForm, G: GenericStructure, rho: Density) -> float:
    """Flat-L2 norm of L' rho - (W rho - M_rho(dS/2)), L = B - A*A.

    Zero in the continuum by the chain rule; O(h^2) for grid difference
    operators.  Normalized by the flat norm of L' rho.
    """
    L_dual = adjoint_l2(H.generator())
    lhs = L_dual.apply(rho.values)
    rhs = G.flow(rho)
    ref = max(norm_l2(rho.space, lhs), 1e-300)
    return norm_l2(rho.space, lhs - rhs) / ref


def orthogonality_defect(W: LinOp, rho: Density, S: EntropyFunctional) -> float:
    """<W rho, dS(rho)> in flat L2; <= 0 is the dissipativity condition."""
    W.space.require_same(rho.space)
    rho.require_positive()
    return dot(W.space, W.apply(rho.values), S.gradient(rho).values)


def pregeneric_to_hypocoercive(
    G: GenericStructure,
    M_sqrt: Callable[[Density], list[LinOp]],
    sample_rhos: Sequence[Density],
    tol_orth: float = 1e-10,
    tol_fact: float = 1e-10,
) -> HypocoerciveForm:
    """Section-3 reverse conversion.

    Checks the supplied square root reproduces M_rho and that W satisfies
    the degeneracy condition on the sampled densities, then reads A off the
    factorization and sets B = W'.  Refuses (StructureError) with the
    measured defect when orthogonality fails — e.g. for the antisymmetric
    channel of the bounce models, where the pairing genuinely has a sign.
    """
    if not sample_rhos:
        raise ValueError("need at least one sample density")
    space = G.space
    worst_orth = 0.0
    worst_fact = 0.0
    for rho in sample_rhos:
        od = abs(orthogonality_defect(G.W, rho, G.S))
        worst_orth = max(worst_orth, od)
        M = G.M_builder(rho)
        comps = M_sqrt(rho)
        prod = None
        for c in comps:
            term = adjoint_l2(c).matrix @ c.matrix
            prod = term if prod is None else prod + term
        diff = (prod - M.matrix).tocoo()
        scale = max(np.abs(M.matrix).max(), 1e-300)
        fd = float(np.max(np.abs(diff.data)) / scale) if diff.data.size else 0.0
        worst_fact = max(worst_fact, fd)
    if worst_fact > tol_fact:
        raise StructureError(f"square-root factorization defect {worst_fact:g} exceeds {tol_fact:g}")
    if worst_orth > tol_orth:
        raise StructureError(f"orthogonality defect {worst_orth:g} exceeds {tol_orth:g}; refusing conversion")

    # A xi = M_rho0^(1/2) xi / sqrt(2 rho0) at a reference density.
    rho0 = sample_rhos[0]
    scaling = sp.diags(1.0 / np.sqrt(2.0 * rho0.values))
    A = [LinOp(space, scaling @ c.matrix, label="A") for c in M_sqrt(rho0)]
    B = adjoint_l2(G.W)
    B.label = "B"
    return HypocoerciveForm(A=A, B=B, mu=G.S.mu)


def pregeneric_residual(
    flow: Callable[[Density], np.ndarray] | LinOp,
    W: LinOp,
    psi,
    S: EntropyFunctional,
    rho: Density,
    orthogonal_form: bool = False,
) -> float:
    """Residual of the pre-GENERIC identity at rho.

    psi(rho; G(rho) - W(rho)) + psi*(rho; -dS/2) + <G(rho) - W(rho), dS>/2,
    or with <G(rho), dS>/2 when orthogonal_form is set.  Nonnegative by
    Fenchel-Young; zero exactly when the flow matches the structure.
    `psi` is a DissipationPotential from the hamiltonian module.
    """
    g = flow.apply(rho.values) if isinstance(flow, LinOp) else flow(rho)
    dS = S.gradient(rho).values
    v = g - W.apply(rho.values)
    value = psi.psi(rho, v) + psi.psi_star(rho, -0.5 * dS)
    if orthogonal_form:
        value += 0.5 * dot(rho.space, g, dS)
    else:
        value += 0.5 * dot(rho.space, v, dS)
    return value
