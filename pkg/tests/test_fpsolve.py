import numpy as np
import pytest

from pregeneric.fields import perturbed_density, random_positive_density
from pregeneric.fpsolve import (
    EvolutionTrace,
    entropy_decay_report,
    evolve,
    pdmp_entropy_terms,
    stability_bound,
    step_fp,
)
from pregeneric.models import ModelBundle, build_grid
from pregeneric.opalg import adjoint_l2
from pregeneric.statespace import Density, normalize


def test_step_preserves_stationary_state(kinetic_small):
    b = kinetic_small
    rho, clipped = step_fp(b.L_dual, b.mu, dt=1e-3)
    assert clipped == 0.0
    # L' mu = 0 exactly, so a step moves mu by round-off only
    assert np.max(np.abs(rho.values - b.mu.values)) <= 1e-12


def test_step_refuses_unstable_dt(kinetic_small):
    b = kinetic_small
    bound = stability_bound(b.L_dual)
    with pytest.raises(ValueError, match="stability"):
        step_fp(b.L_dual, b.mu, dt=2 * bound)


def test_implicit_euler_mass_conserving_beyond_bound(kinetic_small):
    b = kinetic_small
    bound = stability_bound(b.L_dual)
    rng = np.random.default_rng(0)
    rho = perturbed_density(b.mu, rng, amplitude=0.3)
    out, _ = step_fp(b.L_dual, rho, dt=10 * bound, scheme="implicit-euler")
    assert out.mass == pytest.approx(1.0, abs=1e-12)


def test_refresh_relaxation_rate(andersen_small):
    # pure refresh: the v-marginal relaxes to pi0 like exp(-lam t)
    b = andersen_small
    LQ = b.parts["refresh"]
    bundle_q = ModelBundle(L=LQ, L_dual=adjoint_l2(LQ), mu=b.mu, meta={"name": "refresh-only"})
    x, v = b.space.coordinate(0), b.space.coordinate(1)
    rho0 = normalize(Density(b.space, b.mu.values * np.exp(0.4 * v + 0.2 * x)))
    tr = evolve(bundle_q, rho0, T=10.0, dt=5e-3, monitors=("mass", "S_mu"))
    nv = b.jump.refresh_weights.space.n
    nx = b.space.n // nv
    final = tr.snapshots[-1][1].reshape(nx, nv)
    vmarg = (final * b.space.weights.reshape(nx, nv)).sum(axis=0)
    vmarg /= vmarg.sum()
    pi0_mass = b.jump.refresh_weights.values * b.jump.refresh_weights.space.weights
    assert 0.5 * np.abs(vmarg - pi0_mass).sum() <= 1e-3


def test_evolve_monitors_and_stationarity(kinetic_small):
    b = kinetic_small
    tr = evolve(b, b.mu, T=0.5, dt=2e-3, monitors=("mass", "min_value", "S_mu", "h_norm2_mu"))
    assert np.max(np.abs(tr.monitor("mass") - 1.0)) <= 1e-12
    assert np.max(np.abs(tr.monitor("S_mu"))) <= 1e-12
    assert np.max(np.abs(tr.monitor("h_norm2_mu") - 1.0)) <= 1e-12
    assert tr.times == sorted(tr.times)


def test_evolve_entropy_and_norm_decay(kinetic_small):
    b = kinetic_small
    x, v = b.space.coordinate(0), b.space.coordinate(1)
    rho0 = normalize(Density(b.space, b.mu.values * np.exp(0.4 * x - 0.25 * v)))
    tr = evolve(b, rho0, T=4.0, dt=1e-3, monitors=("mass", "S_mu", "h_norm2_mu"))
    rep = entropy_decay_report(tr)
    assert rep.passed, rep.to_dict()
    # L2_mu norm of h = rho/mu is dissipated as well
    ups = np.diff(tr.monitor("h_norm2_mu"))
    assert ups.max() <= 1e-10 * tr.monitor("h_norm2_mu")[0]


def test_evolve_dt_refinement(kinetic_small):
    # halving dt sharply reduces the defect of stationarity preservation
    b = kinetic_small
    rng = np.random.default_rng(1)
    rho0 = perturbed_density(b.mu, rng, amplitude=0.2)
    errs = []
    for dt in (4e-3, 2e-3):
        tr = evolve(b, rho0, T=0.2, dt=dt, monitors=("S_mu",))
        # compare against a fine reference
        ref = evolve(b, rho0, T=0.2, dt=5e-4, monitors=("S_mu",))
        errs.append(abs(tr.monitor("S_mu")[-1] - ref.monitor("S_mu")[-1]))
    assert errs[1] <= errs[0] / 8  # rk4: ~16x per halving


def test_pdmp_entropy_terms(hampdmcmc_small):
    b = hampdmcmc_small
    rng = np.random.default_rng(2)
    # reflection-invariant density: both addends vanish
    x, v = b.space.coordinate(0), b.space.coordinate(1)
    sym = normalize(Density(b.space, np.exp(-0.4 * x**2 - 0.3 * v**2)))
    t = pdmp_entropy_terms(b, sym)
    assert abs(t["T1"]) <= 1e-12 and abs(t["T2"]) <= 1e-12
    # 100 random positive densities: T1 + T2 <= 0 always (log u <= u - 1)
    worst = -np.inf
    for i in range(100):
        rho = (
            random_positive_density(b.space, rng, amplitude=1.0)
            if i % 2
            else perturbed_density(b.mu, rng, 0.6)
        )
        t = pdmp_entropy_terms(b, rho)
        worst = max(worst, t["T1_plus_T2"])
        assert t["lq_term"] <= 1e-12
        assert t["ljs_term"] <= 1e-12
    assert worst <= 1e-10


def test_pdmp_entropy_terms_counterexample(hampdmcmc_small):
    # the antisymmetric pairing reproduces -c^3/sigma on the product density
    b = hampdmcmc_small
    x, v = b.space.coordinate(0), b.space.coordinate(1)
    c, s = 1.0, 1.0
    f = normalize(Density(b.space, np.exp(-0.5 * x**2 - 0.5 * (v - c) ** 2 / s)))
    t = pdmp_entropy_terms(b, f)
    assert t["la_quadrature"] == pytest.approx(-(c**3) / s, abs=0.02)
    assert t["la_term"] == pytest.approx(-(c**3) / s, abs=0.1)


def test_entropy_decay_report_constant_trace():
    tr = EvolutionTrace()
    for k in range(5):
        tr.record(0.1 * k, {"S_mu": 0.5})
    rep = entropy_decay_report(tr)
    assert rep.passed and rep.defect == 0.0
    assert rep.details["first_violation_t"] is None
    tr2 = EvolutionTrace()
    for k, s in enumerate([0.5, 0.4, 0.45, 0.3]):
        tr2.record(0.1 * k, {"S_mu": s})
    rep2 = entropy_decay_report(tr2)
    assert not rep2.passed
    assert rep2.details["first_violation_t"] == pytest.approx(0.2)


def test_clip_budget_abort():
    # a generator engineered to push mass negative: clip budget aborts loudly
    import scipy.sparse as sp

    from pregeneric.opalg import LinOp
    from pregeneric.statespace import finite_space

    space = finite_space(3)
    m = np.array([[-1.0, 2.0, -1.0], [0.5, -1.0, 0.5], [0.5, 0.5, -1.0]])
    L = LinOp(space, m.T)
    mu = normalize(Density(space, np.ones(3)))
    bundle = ModelBundle(L=adjoint_l2(L), L_dual=L, mu=mu, meta={"name": "bad"})
    rho0 = normalize(Density(space, np.array([0.05, 0.9, 0.05])))
    tr = evolve(bundle, rho0, T=2.0, dt=1e-2, monitors=("mass",), clip_budget=1e-9)
    assert tr.aborted
