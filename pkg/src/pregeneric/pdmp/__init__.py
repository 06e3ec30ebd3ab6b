"""PDMP trajectory simulation (compiled kernel with pure-Python fallback)."""

from .simulate import (
    BOUNCE,
    KERNEL,
    REFRESH,
    PdmpSpec,
    Trajectory,
    binned_density,
    empirical_density,
    ergodic_average,
    langevin_reference,
    reversal_statistic,
    simulate,
    total_variation,
    velocity_flip_map,
)

__all__ = [
    "BOUNCE",
    "KERNEL",
    "REFRESH",
    "PdmpSpec",
    "Trajectory",
    "binned_density",
    "empirical_density",
    "ergodic_average",
    "langevin_reference",
    "reversal_statistic",
    "simulate",
    "total_variation",
    "velocity_flip_map",
]
