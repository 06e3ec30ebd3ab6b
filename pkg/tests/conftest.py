import numpy as np
import pytest

from pregeneric.models import (
    andersen_thermostat,
    build_grid,
    ham_pdmcmc,
    kinetic_fokker_planck,
    quadratic_potential_spec,
    tilted_potential_spec,
)
from pregeneric.opalg import LinOp, stationary_density
from pregeneric.statespace import finite_space


@pytest.fixture(scope="session")
def chain2():
    space = finite_space(2)
    L = LinOp(space, [[-1.0, 1.0], [2.0, -2.0]], "chain2")
    return L, stationary_density(L)


@pytest.fixture(scope="session")
def chain3():
    space = finite_space(3)
    L = LinOp(space, [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]], "chain3")
    return L, stationary_density(L)


def kinetic_grid(n, half=5.0):
    return build_grid([{"min": -half, "max": half, "n": n}, {"min": -half, "max": half, "n": n}])


@pytest.fixture(scope="session")
def kinetic_small():
    return kinetic_fokker_planck(quadratic_potential_spec(), kinetic_grid(24))


@pytest.fixture(scope="session")
def andersen_small():
    return andersen_thermostat(quadratic_potential_spec(), 1.0, kinetic_grid(24))


@pytest.fixture(scope="session")
def hampdmcmc_small():
    pot = tilted_potential_spec(quadratic_potential_spec(), 1.0)
    return ham_pdmcmc(pot, 1.0, kinetic_grid(24))
