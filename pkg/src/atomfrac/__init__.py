"""Quasi-static crack evolution in atomistic lattice systems with damageable bonds.

The package simulates time-incremental energy minimization for finite lattices
whose pair interactions weaken irreversibly once a bond has ever been opened
beyond a threshold.  Each increment solves

    minimize  E(y; history) + dissipation(y, y_prev) / (2 * tau)

over deformations y that match the prescribed boundary values, where the
history enters through a per-bond memory of the largest separation seen so
far.  Two dissipation models are provided: a plain squared-distance penalty
and a Kelvin-Voigt penalty on bond-strain increments.

Public entry points live in the submodules:

- :mod:`atomfrac.lattice`        chains and triangular patches, bonds, triples
- :mod:`atomfrac.potentials`     pair wells and the angular triple potential
- :mod:`atomfrac.damage_energy`  memory variable, damaged energy, subgradients
- :mod:`atomfrac.step_solver`    one incremental minimization step
- :mod:`atomfrac.evolution`      full evolutions, interpolants, step-size study
- :mod:`atomfrac.analysis`       independent verification, stress/strain, cracks
- :mod:`atomfrac.cli`            scenario files, presets, CSV/JSON emitters
"""

from atomfrac.errors import (
    ConfigurationError,
    DomainError,
    NonConvergenceError,
    NumericalError,
    ScenarioParseError,
)

__all__ = [
    "ConfigurationError",
    "DomainError",
    "NonConvergenceError",
    "NumericalError",
    "ScenarioParseError",
]

__version__ = "0.1.0"
