import numpy as np
import pytest

from pregeneric.errors import StructureError
from pregeneric.fields import perturbed_density, smooth_values
from pregeneric.generic import EntropyFunctional, entropy_gradient, hypocoercive_to_pregeneric, orthogonality_defect, wasserstein_operator
from pregeneric.models import (
    andersen_thermostat,
    build_grid,
    gradient_ops,
    ham_pdmcmc,
    ito_diffusion,
    kinetic_fokker_planck,
    pdmp_dissipation_potential,
    pdmp_theorem_potential,
    quadratic_potential_spec,
    quartic_potential_spec,
    tilted_potential_spec,
)
from pregeneric.opalg import adjoint_l2, adjoint_l2mu, split_sym_antisym
from pregeneric.statespace import Density, normalize


def sqgrid(n, half=5.0):
    return build_grid([{"min": -half, "max": half, "n": n}, {"min": -half, "max": half, "n": n}])


# -- ito_diffusion -----------------------------------------------------------


def test_ito_ou_closed_forms():
    grid = build_grid([{"min": -6, "max": 6, "n": 128}])
    h = grid.axes[0].spacing
    b = ito_diffusion(lambda p: -p, 1.0, grid)
    x = grid.coordinate(0)
    gauss = np.exp(-0.5 * x * x)
    gauss /= np.sum(gauss * grid.weights)
    assert np.sqrt(np.sum((b.mu.values - gauss) ** 2 * grid.weights)) <= 5 * h * h
    # reversible: antisymmetric part ~ 0
    _, La = split_sym_antisym(b.L, b.mu)
    assert np.abs(La.matrix).max() <= 5 * h * h * b.L.scale()
    assert b.validate()["pass"]


def test_ito_periodic_laplacian():
    grid = build_grid([{"min": 0, "max": 1, "n": 32, "boundary": "periodic"}])
    b = ito_diffusion(lambda p: 0.0 * p, 1.0, grid)
    np.testing.assert_allclose(b.mu.values, 1.0, atol=1e-12)
    assert np.abs((b.L.matrix - b.L.matrix.T)).max() <= 1e-12


def test_ito_2d_rotation_closed_forms():
    def drift(p):
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        return -p + p @ J.T

    grid = build_grid([{"min": -4, "max": 4, "n": 41}, {"min": -4, "max": 4, "n": 41}])
    h = grid.axes[0].spacing
    b = ito_diffusion(drift, 1.0, grid)
    assert b.meta["max_cell_peclet"] <= 1.0
    assert b.validate()["pass"]
    Ls, La = split_sym_antisym(b.L, b.mu)
    assert np.abs(La.matrix).max() > 0.1 * b.L.scale()  # genuinely non-reversible

    # closed forms: Ls f = div(D grad f) + D grad f . grad log mu,
    #               La f = b . grad f - D grad f . grad log mu
    rng = np.random.default_rng(0)
    grads = gradient_ops(grid)
    glm = np.stack([g.apply(np.log(b.mu.values)) for g in grads], axis=1)
    bv = drift(grid.points)
    mw = grid.weights * b.mu.values
    for _ in range(5):
        f = smooth_values(grid, rng)
        gf = np.stack([g.apply(f) for g in grads], axis=1)
        lap = sum(g.matrix @ (g.matrix @ f) for g in grads)
        closed_s = lap + np.sum(gf * glm, axis=1)
        closed_a = np.sum(bv * gf, axis=1) - np.sum(gf * glm, axis=1)
        for op, closed in ((Ls, closed_s), (La, closed_a)):
            d = op.apply(f) - closed
            num = np.sqrt(np.sum(d * d * mw))
            den = max(np.sqrt(np.sum(closed**2 * mw)), 1e-300)
            assert num / den <= 5 * h * h


def test_ito_rejects_degenerate_diffusion():
    grid = build_grid([{"min": -1, "max": 1, "n": 9}, {"min": -1, "max": 1, "n": 9}])
    sig = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(StructureError):
        ito_diffusion(lambda p: -p, sig, grid)


# -- kinetic Fokker-Planck -----------------------------------------------------


def test_kinetic_structure(kinetic_small):
    b = kinetic_small
    h = b.space.axes[0].spacing
    val = b.validate()
    assert val["pass"]
    assert val["stationarity_defect"] <= 1e-14
    # W mu = 0 to grid tolerance (B' mu exactly zero is not required; the
    # raw transport residual is the consistency metric)
    G = hypocoercive_to_pregeneric(b.hypo)
    assert np.max(np.abs(G.W.apply(b.mu.values))) <= 5 * h * h * 10
    # M_mu(dS(mu)) = 0 (dS(mu) constant and A 1 = 0): exact
    M = wasserstein_operator(b.hypo.A, b.mu)
    dS = entropy_gradient(b.mu, b.mu).values
    assert np.max(np.abs(M.apply(dS))) <= 1e-12


def test_kinetic_rejects_asymmetric_v_grid():
    pot = quadratic_potential_spec()
    grid = build_grid([{"min": -5, "max": 5, "n": 16}, {"min": -4, "max": 5, "n": 16}])
    with pytest.raises(ValueError, match="symmetric"):
        kinetic_fokker_planck(pot, grid)


def test_kinetic_quartic_potential():
    # steeper potential: larger consistency constant, so give the quartic
    # builder 10 h^2 instead of the quadratic models' 5 h^2 budget
    b = kinetic_fokker_planck(quartic_potential_spec(), sqgrid(20, half=4.0))
    assert b.validate(tol_structure=b.grid_tol(c=10.0))["pass"]
    assert b.validate()["stationarity_defect"] <= 1e-14


# -- Andersen thermostat -------------------------------------------------------


def test_andersen_refresh_identities(andersen_small):
    b = andersen_small
    LQ = b.parts["refresh"]
    lam = b.meta["lambda_r"]
    n = b.space.n
    nv = b.jump.refresh_weights.space.n
    # L_Q kills functions independent of v
    fx = np.repeat(np.sin(np.linspace(0, 1, n // nv)), nv)
    assert np.max(np.abs(LQ.apply(fx))) <= 1e-12 * lam
    # self-adjoint in L2_mu, exactly
    assert np.abs((adjoint_l2mu(LQ, b.mu).matrix - LQ.matrix)).max() <= 1e-12 * lam
    # projection defect: L_Q o L_Q = -lam L_Q
    comp = LQ.matrix @ LQ.matrix + lam * LQ.matrix
    assert np.abs(comp).max() <= 1e-12 * lam
    # stationarity of the refresh channel alone
    assert np.max(np.abs(adjoint_l2(LQ).apply(b.mu.values))) <= 1e-14


def test_andersen_closed_form_dual(andersen_small):
    b = andersen_small
    lam = b.meta["lambda_r"]
    nv = b.jump.refresh_weights.space.n
    nx = b.space.n // nv
    rng = np.random.default_rng(1)
    f = rng.random(b.space.n)
    F = f.reshape(nx, nv)
    wv = b.jump.refresh_weights.space.weights
    intf = (F * wv[None, :]).sum(axis=1)
    closed = lam * (np.outer(intf, b.jump.refresh_weights.values) - F).ravel()
    np.testing.assert_allclose(adjoint_l2(b.parts["refresh"]).apply(f), closed, atol=1e-12 * lam)


def test_andersen_orthogonality(andersen_small):
    b = andersen_small
    h = b.space.axes[0].spacing
    S = EntropyFunctional(b.mu)
    rng = np.random.default_rng(2)
    W = b.parts["L_A_dual"]
    for _ in range(5):
        rho = perturbed_density(b.mu, rng, amplitude=0.25)
        assert abs(orthogonality_defect(W, rho, S)) <= 5 * h * h


def test_andersen_rejects_bad_args():
    pot = quadratic_potential_spec()
    with pytest.raises(ValueError):
        andersen_thermostat(pot, 0.0, sqgrid(8))
    with pytest.raises(ValueError):
        andersen_thermostat(tilted_potential_spec(pot, 1.0), 1.0, sqgrid(8))


# -- Hamiltonian PD-MCMC ---------------------------------------------------


def test_hampdmcmc_reduces_to_andersen(andersen_small):
    # V_tilde = V means U_tilde = 0: the jump channel vanishes
    pot = quadratic_potential_spec()
    pot_same = tilted_potential_spec(pot, 0.0)
    grid = sqgrid(24)
    b = ham_pdmcmc(pot_same, 1.0, grid)
    assert np.max(np.abs(b.jump.a_field.values)) == 0.0
    assert b.parts["bounce_sym"].matrix.nnz == 0
    a = andersen_small
    assert np.abs((b.L.matrix - a.L.matrix)).max() <= 1e-12 * a.L.scale()


def test_hampdmcmc_rate_and_reflection(hampdmcmc_small):
    b = hampdmcmc_small
    v = b.space.coordinate(1)
    np.testing.assert_allclose(b.jump.rate.values, np.maximum(v, 0.0), atol=1e-13)
    rep = b.jump.validate()
    assert rep["rate_nonnegative"]
    assert rep["a_antisymmetry_defect"] <= 1e-13
    assert rep["complementary_rates_defect"] <= 1e-13
    assert rep["snap_error"] == 0.0


def test_hampdmcmc_LS_closed_form_exact(hampdmcmc_small):
    b = hampdmcmc_small
    Ls, La = split_sym_antisym(b.L, b.mu)
    scale = b.L.scale()
    assert np.abs((Ls.matrix - b.parts["L_S"].matrix)).max() <= 1e-12 * scale
    assert np.abs((La.matrix - b.parts["L_A"].matrix)).max() <= 1e-12 * scale
    # L_S' rho in gradient form: handled in dissipation tests below
    val = b.validate()
    assert val["pass"]
    assert val["stationarity_defect"] <= 1e-14


def test_hampdmcmc_counterexample_value_small_grid():
    pot = tilted_potential_spec(quadratic_potential_spec(), 1.0)
    grid = build_grid([{"min": -8, "max": 8, "n": 96}, {"min": -8, "max": 8, "n": 96}])
    b = ham_pdmcmc(pot, 0.0, grid)
    x, v = grid.coordinate(0), grid.coordinate(1)
    S = EntropyFunctional(b.mu)
    for (c, s), expect in (((1.0, 1.0), -1.0), ((-1.0, 1.0), 1.0), ((2.0, 0.5), -16.0)):
        f = normalize(Density(grid, np.exp(-0.5 * x**2 - 0.5 * (v - c) ** 2 / s)))
        val = orthogonality_defect(b.parts["L_A_dual"], f, S)
        assert val == pytest.approx(expect, rel=0.02)


def test_hampdmcmc_d2_exact_reflection():
    # U_tilde = x1: grad U = (1, 0) flips v1 only; exact on a symmetric grid
    import numpy as np

    pot = quadratic_potential_spec()

    class P2:
        name = "2d"

        def V(self, x):
            return 0.5 * np.sum(x**2, axis=-1)

        def dV(self, x):
            return x

        V_tilde = True

        def dV_tilde(self, x):
            g = np.array(x, float)
            g[:, 0] -= 1.0
            return g

        def dU_tilde(self, x):
            g = np.zeros_like(np.atleast_2d(x))
            g[:, 0] = 1.0
            return g

        def flow_grad(self, x):
            return x  # used axis-wise; fine for this check

        def confinement_warning(self, lo, hi):
            return None

    grid = build_grid(
        [
            {"min": -3, "max": 3, "n": 9},
            {"min": -3, "max": 3, "n": 9},
            {"min": -3, "max": 3, "n": 9},
            {"min": -3, "max": 3, "n": 9},
        ]
    )
    b = ham_pdmcmc(P2(), 0.5, grid)
    assert b.jump.snap_error == 0.0
    perm = b.jump.reflection.permutation
    pts = grid.points
    np.testing.assert_allclose(pts[perm][:, 2], -pts[:, 2], atol=1e-12)  # v1 flipped
    np.testing.assert_allclose(pts[perm][:, 3], pts[:, 3], atol=1e-12)  # v2 kept
    assert b.validate()["pass"]


def test_hampdmcmc_d2_snap_refusal():
    class P2:
        name = "skew"

        def V(self, x):
            return 0.5 * np.sum(x**2, axis=-1)

        def dV(self, x):
            return x

        V_tilde = True

        def dV_tilde(self, x):
            return x - np.array([2.0, 1.0])

        def dU_tilde(self, x):
            g = np.zeros_like(np.atleast_2d(x))
            g[:, 0] = 2.0
            g[:, 1] = 1.0
            return g

        def flow_grad(self, x):
            return x

        def confinement_warning(self, lo, hi):
            return None

    grid = build_grid([{"min": -2, "max": 2, "n": 5}] * 4)
    with pytest.raises(StructureError, match="snap|involution"):
        ham_pdmcmc(P2(), 0.5, grid)


# -- PDMP dissipation potential ----------------------------------------------


def test_pdmp_dissipation_potential(hampdmcmc_small):
    b = hampdmcmc_small
    pot = pdmp_dissipation_potential(b)
    ref = pdmp_theorem_potential(b)
    rng = np.random.default_rng(3)
    n = b.space.n
    rho = perturbed_density(b.mu, rng, amplitude=0.3)
    assert pot.psi_star(rho, np.zeros(n)) == pytest.approx(0.0, abs=1e-14)
    assert pot.psi_star(rho, np.full(n, 2.3)) == pytest.approx(0.0, abs=1e-10)
    # cross-validation against the Hamiltonian-difference construction
    worst = 0.0
    for _ in range(50):
        rho = perturbed_density(b.mu, rng, amplitude=0.4)
        xi = rng.standard_normal(n) * 0.5
        a = pot.psi_star(rho, xi)
        bb = ref.psi_star(rho, xi)
        worst = max(worst, abs(a - bb) / max(1.0, abs(bb)))
    assert worst <= 1e-9
    # gradient-flow form of L_S' at xi = -dS/2
    LSd = adjoint_l2(b.parts["L_S"])
    rho = perturbed_density(b.mu, rng, amplitude=0.3)
    dS = np.log(rho.values / b.mu.values) + 1.0
    g = pot.grad_psi_star(rho, -0.5 * dS)
    target = LSd.apply(rho.values)
    np.testing.assert_allclose(g, target, atol=1e-11 * max(1.0, np.abs(target).max()))
