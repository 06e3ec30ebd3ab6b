"""Discrete operator algebra on weighted state spaces.

Generators are plain matrices (dense or scipy sparse).  The flat-L2 adjoint
of L is  D_w^-1 L^T D_w  and the L2_mu adjoint is  D_{w mu}^-1 L^T D_{w mu},
both exact diagonal conjugations of the transpose, so adjoint-based
identities (splitting reconstruction, double adjoint) hold to round-off by
construction.  Grid-induced consistency error lives elsewhere, in how a
matrix approximates a differential operator, never in the adjoint algebra.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonErgodicError, PositivityError, StructureError
from .fields import smooth_values
from .statespace import Density, ScalarField, StateSpace, normalize

Matrix = "sp.spmatrix | np.ndarray"


def _as_spmatrix(m) -> sp.csr_matrix:
    if sp.issparse(m):
        return m.tocsr()
    return sp.csr_matrix(np.asarray(m, float))


@dataclass
class LinOp:
    """Linear operator on fields over a state space."""

    space: StateSpace
    matrix: "sp.csr_matrix"
    label: str = ""

    def __post_init__(self):
        self.matrix = _as_spmatrix(self.matrix)
        n = self.space.n
        if self.matrix.shape != (n, n):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match space size {n}")
        if not np.all(np.isfinite(self.matrix.data)):
            raise ValueError("matrix entries must be finite")

    def apply(self, f) -> np.ndarray:
        v = f.values if isinstance(f, (ScalarField, Density)) else np.asarray(f, float)
        return self.matrix @ v

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def scale(self) -> float:
        """Magnitude reference for relative defects: largest off-diagonal,
        falling back to the largest entry for (near-)diagonal matrices."""
        coo = self.matrix.tocoo()
        off = np.abs(coo.data[coo.row != coo.col])
        s = float(off.max()) if off.size else 0.0
        if s == 0.0:
            s = float(np.abs(coo.data).max()) if coo.data.size else 0.0
        return s if s > 0 else 1.0

    def constant_defect(self) -> float:
        """Max |L 1| — zero for anything claiming to be a Markov generator."""
        ones = np.ones(self.space.n)
        return float(np.max(np.abs(self.matrix @ ones)))

    def __add__(self, other: "LinOp") -> "LinOp":
        self.space.require_same(other.space)
        return LinOp(self.space, self.matrix + other.matrix, self.label)

    def __sub__(self, other: "LinOp") -> "LinOp":
        self.space.require_same(other.space)
        return LinOp(self.space, self.matrix - other.matrix, self.label)

    def __mul__(self, c: float) -> "LinOp":
        return LinOp(self.space, self.matrix * c, self.label)

    __rmul__ = __mul__


def _diag_conj_transpose(L: LinOp, m: np.ndarray) -> sp.csr_matrix:
    """D_m^-1 L^T D_m as a sparse matrix."""
    Dm = sp.diags(m)
    Dinv = sp.diags(1.0 / m)
    return (Dinv @ L.matrix.T @ Dm).tocsr()


def adjoint_l2(L: LinOp) -> LinOp:
    """Flat-L2 adjoint: <Lf, g> = <f, L'g> exactly up to round-off."""
    return LinOp(L.space, _diag_conj_transpose(L, L.space.weights), label=L.label + "'")


def adjoint_l2mu(L: LinOp, mu: Density) -> LinOp:
    """L2_mu adjoint: <Lf, g>_mu = <f, L*g>_mu."""
    L.space.require_same(mu.space)
    mu.require_positive()
    m = L.space.weights * mu.values
    return LinOp(L.space, _diag_conj_transpose(L, m), label=L.label + "*")


def split_sym_antisym(L: LinOp, mu: Density) -> tuple[LinOp, LinOp]:
    """Symmetric/antisymmetric parts of L in L2_mu: (L + L*)/2, (L - L*)/2."""
    Ls_matrix = adjoint_l2mu(L, mu).matrix
    sym = LinOp(L.space, (L.matrix + Ls_matrix) * 0.5, label=L.label + "_s")
    anti = LinOp(L.space, (L.matrix - Ls_matrix) * 0.5, label=L.label + "_a")
    return sym, anti


def stationary_density(L: LinOp, tol: float = 1e-10) -> Density:
    """Positive unit-mass solution of L' mu = 0.

    Solves for the mass vector m = w*mu in ker(L^T).  Dense SVD (with a
    kernel-dimension check) up to n=2000, shifted inverse iteration above.
    """
    n = L.space.n
    scale = max(spla.norm(L.matrix, np.inf), 1e-300) if sp.issparse(L.matrix) else 1.0
    if n <= 2000:
        A = L.matrix.toarray().T
        _, s, Vt = np.linalg.svd(A)
        null_tol = max(tol, 1e-12) * max(s[0], 1.0)
        kernel_dim = int(np.sum(s <= null_tol))
        if kernel_dim == 0:
            raise NonErgodicError("generator transpose has trivial kernel")
        if kernel_dim > 1:
            raise NonErgodicError(
                f"stationary solve found a {kernel_dim}-dimensional kernel (reducible chain)"
            )
        m = Vt[-1]
    else:
        shift = 1e-8 * scale
        A = (L.matrix.T - shift * sp.identity(n, format="csr")).tocsc()
        lu = spla.splu(A)
        m = np.ones(n) / n
        for _ in range(100):
            m_new = lu.solve(m)
            m_new /= np.linalg.norm(m_new)
            if np.linalg.norm(m_new - m) < 1e-14 or np.linalg.norm(m_new + m) < 1e-14:
                m = m_new
                break
            m = m_new
    if np.sum(m) < 0:
        m = -m
    if np.any(m < -1e-9 * np.max(np.abs(m))):
        raise PositivityError("kernel vector is not sign-definite; no positive stationary density")
    m = np.clip(m, 0.0, None)
    mu = normalize(Density(L.space, m / L.space.weights))
    residual = np.max(np.abs(adjoint_l2(L).matrix @ mu.values))
    if residual > 1e-8 * scale:
        raise StructureError(f"stationary residual {residual:g} exceeds tolerance")
    return mu


@dataclass
class CheckReport:
    check: str
    passed: bool
    defect: float
    tol: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "pass": bool(self.passed),
            "defect": float(self.defect),
            "tol": float(self.tol),
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def check_detailed_balance(L: LinOp, mu: Density, tol: float = 1e-10) -> CheckReport:
    """Self-adjointness of L in L2_mu; defect is max |L* - L| over the rate scale."""
    Lstar = adjoint_l2mu(L, mu)
    diff = (Lstar.matrix - L.matrix).tocoo()
    defect = float(np.max(np.abs(diff.data))) if diff.data.size else 0.0
    defect /= L.scale()
    return CheckReport("detailed-balance", defect <= tol, defect, tol)


@dataclass(frozen=True)
class Involution:
    """Volume-preserving index involution (the discrete state-space map F)."""

    space: StateSpace
    permutation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.permutation, int)
        object.__setattr__(self, "permutation", p)
        if p.shape != (self.space.n,):
            raise ValueError("permutation length mismatch")
        if not np.array_equal(p[p], np.arange(self.space.n)):
            raise ValueError("map is not an involution")
        w = self.space.weights
        if not np.allclose(w[p], w, rtol=1e-12, atol=0):
            raise ValueError("involution does not preserve quadrature weights")

    @staticmethod
    def identity(space: StateSpace) -> "Involution":
        return Involution(space, np.arange(space.n))

    def pushforward(self, values: np.ndarray) -> np.ndarray:
        """f o F (equals the density pushforward on a weight-preserving map)."""
        return np.asarray(values)[self.permutation]

    def matrix(self) -> sp.csr_matrix:
        n = self.space.n
        return sp.csr_matrix((np.ones(n), (np.arange(n), self.permutation)), shape=(n, n))

    def mu_invariance_defect(self, mu: Density) -> float:
        v = mu.values
        return float(np.max(np.abs(v[self.permutation] - v)) / np.max(v))


def check_generalized_reversibility(
    L: LinOp,
    mu: Density,
    F: Involution,
    tol: float = 1e-10,
    n_probe: int = 64,
    seed: int = 0,
) -> CheckReport:
    """Defect of L* f = F(L(F f)).

    On finite-state spaces (n <= 512) the comparison is exact, entry-wise on
    the matrices.  On grids the operators only approximate their continuum
    counterparts, so the defect is measured as the worst relative L2_mu
    deviation over seeded smooth probe fields — the quantity that shows the
    O(h^2) consistency order instead of boundary-stencil noise.
    """
    L.space.require_same(mu.space)
    inv_defect = F.mu_invariance_defect(mu)
    warn = inv_defect > max(tol, 1e-12)
    Lstar = adjoint_l2mu(L, mu)
    scale = L.scale()
    if L.space.kind != "grid" and L.space.n <= 512:
        P = F.matrix()
        diff = (Lstar.matrix - P @ L.matrix @ P).tocoo()
        defect = float(np.max(np.abs(diff.data)) / scale) if diff.data.size else 0.0
    else:
        rng = np.random.default_rng(seed)
        m = L.space.weights * mu.values
        defect = 0.0
        for _ in range(n_probe):
            f = smooth_values(L.space, rng)
            lhs = Lstar.apply(f)
            rhs = F.pushforward(L.apply(F.pushforward(f)))
            num = float(np.sqrt(np.sum((lhs - rhs) ** 2 * m)))
            den = max(float(np.sqrt(np.sum(rhs**2 * m))), scale * float(np.sqrt(np.sum(f**2 * m))))
            defect = max(defect, num / max(den, 1e-300))
    details = {"mu_invariance_defect": inv_defect, "mu_invariant": not warn}
    return CheckReport("generalized-reversibility", (defect <= tol) and not warn, defect, tol, details)


# -- matrix I/O -----------------------------------------------------------


def save_matrix(path, L: LinOp):
    """Coordinate-list text format with a JSON header line."""
    coo = L.matrix.tocoo()
    header = {"n": L.space.n, "nnz": int(coo.nnz), "label": L.label}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


def load_matrix(path, space: StateSpace) -> LinOp:
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows, cols, vals = [], [], []
        for line in fh:
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    n = header["n"]
    if n != space.n:
        raise ValueError("matrix size does not match space")
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return LinOp(space, m, label=header.get("label", ""))
