"""Structure analysis of non-reversible Markov processes.

Converts between hypocoercive and pre-GENERIC formulations, computes
Feng-Kurtz Hamiltonians and dissipation potentials, checks (generalized)
reversibility, and verifies entropy decay on concrete models by discrete
operator analysis, PDE time stepping and stochastic simulation.
"""

__version__ = "0.1.0"
