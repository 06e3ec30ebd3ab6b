import numpy as np
import pytest

from pregeneric.errors import MassError, PositivityError, StructureError
from pregeneric.fields import perturbed_density, smooth_values
from pregeneric.generic import (
    EntropyFunctional,
    GenericStructure,
    entropy_gradient,
    hypocoercive_to_pregeneric,
    msqrt_from_A,
    orthogonality_defect,
    pregeneric_residual,
    pregeneric_to_hypocoercive,
    reconstruction_defect,
    relative_entropy,
    wasserstein_operator,
)
from pregeneric.hamiltonian import quadratic_potential
from pregeneric.models import gradient_ops
from pregeneric.opalg import LinOp, adjoint_l2
from pregeneric.statespace import Density, build_grid, dot, finite_space, normalize


def test_relative_entropy_examples(chain2):
    _, mu = chain2
    assert relative_entropy(mu, mu) == pytest.approx(0.0, abs=1e-14)
    rho = Density(mu.space, [0.5, 0.5])
    assert relative_entropy(rho, mu) == pytest.approx(0.5 * np.log(9 / 8))
    assert relative_entropy(rho, mu) > 0
    with pytest.raises(MassError):
        relative_entropy(Density(mu.space, [0.5, 0.4]), mu)
    with pytest.raises(PositivityError):
        relative_entropy(Density(mu.space, [1.0, 0.0]), mu)


def test_entropy_gradient_examples(chain2, kinetic_small):
    _, mu = chain2
    np.testing.assert_allclose(entropy_gradient(mu, mu).values, 1.0, atol=1e-14)
    rho = Density(mu.space, np.array([0.8, 1.2]) * mu.values)
    np.testing.assert_allclose(entropy_gradient(rho, mu).values, [np.log(0.8) + 1, np.log(1.2) + 1])

    # kinetic model: dS - (log rho + V + v^2/2 + 1) is a constant field
    b = kinetic_small
    rng = np.random.default_rng(0)
    rho = perturbed_density(b.mu, rng, amplitude=0.3)
    x, v = b.space.coordinate(0), b.space.coordinate(1)
    ds = entropy_gradient(rho, b.mu).values
    closed = np.log(rho.values) + 0.5 * x**2 + 0.5 * v**2 + 1.0
    diff = ds - closed
    assert np.max(diff) - np.min(diff) <= 1e-10


def test_wasserstein_operator_small_grid():
    # forward difference on a 3-point periodic grid, uniform rho:
    # M = 2 rho A^T A = 2 rho (graph Laplacian)/h^2
    sp = build_grid([{"min": 0, "max": 3, "n": 3, "boundary": "periodic"}])
    h = sp.axes[0].spacing
    import scipy.sparse as sps

    fwd = sps.csr_matrix((np.array([-1, 1, -1, 1, -1, 1]) / h, ([0, 0, 1, 1, 2, 2], [0, 1, 1, 2, 2, 0])), shape=(3, 3))
    A = LinOp(sp, fwd)
    rho = normalize(Density(sp, np.ones(3)))
    M = wasserstein_operator(A, rho)
    lap = np.array([[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]])
    np.testing.assert_allclose(M.dense(), 2 * rho.values[0] * lap / h**2, atol=1e-12)
    # constants are annihilated
    assert np.max(np.abs(M.apply(np.ones(3)))) <= 1e-12


def test_wasserstein_operator_invariants(kinetic_small):
    b = kinetic_small
    rng = np.random.default_rng(1)
    rho = perturbed_density(b.mu, rng, amplitude=0.4)
    G = hypocoercive_to_pregeneric(b.hypo)
    rep = G.validate_mobility(rho, tol=1e-12)
    assert rep["pass"], rep


def test_wasserstein_matches_closed_form_kinetic(kinetic_small):
    # M_rho f ~ -2 d_v(rho d_v f) in the interior, to consistency error
    b = kinetic_small
    rng = np.random.default_rng(2)
    rho = perturbed_density(b.mu, rng, amplitude=0.3)
    M = wasserstein_operator(b.hypo.A, rho)
    f = smooth_values(b.space, rng)
    Dv = b.hypo.A[0]
    # defining identity (A' is the exact discrete adjoint of A)
    exact = 2.0 * adjoint_l2(Dv).apply(rho.values * Dv.apply(f))
    np.testing.assert_allclose(M.apply(f), exact, atol=1e-12 * np.abs(exact).max())
    # continuum form -2 d_v(rho d_v f): consistency only, measured in L2_mu
    closed = -2.0 * Dv.apply(rho.values * Dv.apply(f))
    h = b.space.axes[0].spacing
    mw = b.space.weights * b.mu.values
    num = np.sqrt(np.sum((M.apply(f) - closed) ** 2 * mw))
    den = np.sqrt(np.sum(closed**2 * mw))
    assert num / den <= 5 * h * h


def test_hypocoercive_to_pregeneric_defect(kinetic_small):
    b = kinetic_small
    G = hypocoercive_to_pregeneric(b.hypo)
    h = b.space.axes[0].spacing
    rng = np.random.default_rng(3)
    for _ in range(5):
        rho = perturbed_density(b.mu, rng, amplitude=0.25)
        assert reconstruction_defect(b.hypo, G, rho) <= 5 * h * h
    # stationarity: the flow vanishes at rho = mu
    flow_at_mu = G.flow(b.mu)
    ref = np.abs(G.W.matrix).max()
    assert np.max(np.abs(flow_at_mu)) <= 5 * h * h * ref


def test_pure_gradient_flow_case():
    # B = 0, A = d_v on a 1-axis grid with Gaussian mu: pure gradient flow
    sp = build_grid([{"min": -5, "max": 5, "n": 64}])
    from pregeneric.generic import HypocoerciveForm

    mu = normalize(Density(sp, np.exp(-0.5 * sp.coordinate(0) ** 2)))
    A = gradient_ops(sp)
    B = LinOp(sp, np.zeros((64, 64)))
    H = HypocoerciveForm(A=A, B=B, mu=mu)
    G = hypocoercive_to_pregeneric(H)
    h = sp.axes[0].spacing
    rng = np.random.default_rng(4)
    rho = perturbed_density(mu, rng, amplitude=0.3)
    assert reconstruction_defect(H, G, rho) <= 5 * h * h
    assert abs(orthogonality_defect(G.W, rho, G.S)) <= 1e-14


def test_orthogonality_defect_cases(chain3, kinetic_small, hampdmcmc_small):
    # finite state, uniform rho, generator dual: exactly zero
    L3, mu3 = chain3
    W = adjoint_l2(L3)
    rho_u = normalize(Density(L3.space, np.ones(3)))
    S = EntropyFunctional(mu3)
    assert abs(orthogonality_defect(W, rho_u, S)) <= 1e-13

    # kinetic: analytically zero, discretely O(h^2)
    b = kinetic_small
    h = b.space.axes[0].spacing
    G = hypocoercive_to_pregeneric(b.hypo)
    rng = np.random.default_rng(5)
    for _ in range(5):
        rho = perturbed_density(b.mu, rng, amplitude=0.25)
        assert abs(orthogonality_defect(LinOp(b.space, -b.hypo.B.matrix), rho, G.S)) <= 5 * h * h

    # PDMP antisymmetric channel: the pairing has a definite nonzero value
    bp = hampdmcmc_small
    x, v = bp.space.coordinate(0), bp.space.coordinate(1)
    f = normalize(Density(bp.space, np.exp(-0.5 * x**2 - 0.5 * (v - 1.0) ** 2)))
    val = orthogonality_defect(bp.parts["L_A_dual"], f, EntropyFunctional(bp.mu))
    assert val == pytest.approx(-1.0, abs=0.1)


def test_roundtrip_and_refusal(kinetic_small, hampdmcmc_small):
    b = kinetic_small
    h = b.space.axes[0].spacing
    G = hypocoercive_to_pregeneric(b.hypo)
    rng = np.random.default_rng(6)
    samples = [perturbed_density(b.mu, rng, amplitude=0.2) for _ in range(3)]
    H2 = pregeneric_to_hypocoercive(G, msqrt_from_A(b.hypo.A), samples, tol_orth=5 * h * h, tol_fact=1e-10)
    assert np.abs((H2.B.matrix - b.hypo.B.matrix)).max() <= 1e-9 * b.hypo.B.scale()
    d1 = H2.dissipative_part().dense()
    d0 = b.hypo.dissipative_part().dense()
    assert np.abs(d1 - d0).max() <= 1e-9 * np.abs(d0).max()

    # W = 0 with M from A gives B = 0
    G0 = GenericStructure(W=LinOp(b.space, np.zeros((b.space.n, b.space.n))), M_builder=G.M_builder, S=G.S)
    H0 = pregeneric_to_hypocoercive(G0, msqrt_from_A(b.hypo.A), samples, tol_orth=1e-10)
    assert np.abs(H0.B.matrix).max() == 0.0

    # the PDMP antisymmetric dual violates orthogonality: refusal
    bp = hampdmcmc_small
    x, v = bp.space.coordinate(0), bp.space.coordinate(1)
    f = normalize(Density(bp.space, np.exp(-0.5 * x**2 - 0.5 * (v - 1.0) ** 2)))
    Gbad = GenericStructure(W=bp.parts["L_A_dual"], M_builder=G.M_builder, S=EntropyFunctional(bp.mu))
    with pytest.raises(StructureError, match="orthogonality"):
        pregeneric_to_hypocoercive(Gbad, msqrt_from_A(b.hypo.A), [f], tol_orth=0.5)


def test_pregeneric_residual(chain2):
    L, mu = chain2
    from pregeneric.opalg import split_sym_antisym

    Ls, La = split_sym_antisym(L, mu)
    from pregeneric.hamiltonian import dissipation_from_Hs

    psi = dissipation_from_Hs(Ls, mu)
    S = EntropyFunctional(mu)
    W = adjoint_l2(La)
    rng = np.random.default_rng(7)

    def flow(rho):
        dS = S.gradient(rho).values
        return W.apply(rho.values) + psi.grad_psi_star(rho, -0.5 * dS)

    from pregeneric.fields import random_positive_density

    rho = random_positive_density(L.space, rng)
    # defining identity: residual vanishes for the structure's own flow
    assert abs(pregeneric_residual(flow, W, psi, S, rho)) <= 1e-8
    # perturbed flows have strictly positive residual, growing with eps
    vals = []
    for eps in (1e-3, 1e-2, 1e-1):
        noise = smooth_values(L.space, np.random.default_rng(8))

        def flow_eps(rho, e=eps):
            return flow(rho) + e * noise

        vals.append(pregeneric_residual(flow_eps, W, psi, S, rho))
    assert vals[0] > 1e-9 and vals[0] < vals[1] < vals[2]


def test_pregeneric_residual_quadratic_identity(kinetic_small):
    # quadratic psi* from M_rho reproduces the gradient-flow identity
    b = kinetic_small
    G = hypocoercive_to_pregeneric(b.hypo)
    qp = quadratic_potential(G.M_builder)
    rng = np.random.default_rng(9)
    rho = perturbed_density(b.mu, rng, amplitude=0.2)
    dS = G.S.gradient(rho).values

    def flow(r):
        return G.W.apply(r.values) + qp.grad_psi_star(r, -0.5 * G.S.gradient(r).values)

    # algebraic check in M-weighted form: psi(G - W) = <dS/2, M dS/2>/2 etc.
    M = G.M_builder(rho)
    v = -M.apply(0.5 * dS)
    lhs = qp.psi_closed(rho, v)
    rhs = 0.5 * dot(rho.space, 0.5 * dS, M.apply(0.5 * dS))
    assert lhs == pytest.approx(rhs, rel=1e-8)
    res = pregeneric_residual(flow, G.W, qp, G.S, rho)
    scale = abs(rhs) + 1.0
    assert abs(res) <= 1e-7 * scale
