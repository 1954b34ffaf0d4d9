"""Interaction potentials.

The pair well is a shifted Lennard-Jones in reduced form

    w(s) = s**-12 - 2 * s**-6,      s = r / rest_length,

which has its minimum at s = 1 with w(1) = -1, blows up as s -> 0+, is
strictly increasing for s > 1 and tends to 0 from below at infinity, with
derivative decaying like s**-7.  A PairPotential scales w by a well depth
and the separation by its rest length, so nearest and next-nearest bonds
use the same family:

    nearest:       depth 1,     rest = spacing
    next-nearest:  depth eta,   rest = sqrt(3) * spacing

The triple potential penalizes deviations of the angle between two bond
arms from a rest angle, acting through the cosine so it stays smooth at
straight and folded configurations:

    value(theta) = stiffness * (cos(theta) - cos(rest_angle))**2
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from atomfrac.errors import ConfigurationError, DomainError

LENNARD_JONES_SHIFTED = "lennard_jones_shifted"


def _reduced_well(s):
    s6 = s ** -6
    return s6 * s6 - 2.0 * s6


def _reduced_well_derivative(s):
    # d/ds (s^-12 - 2 s^-6) = -12 s^-13 + 12 s^-7
    return 12.0 * (s ** -7 - s ** -13)


def _validate_separation(r):
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise DomainError("separation must be finite")
    if np.any(r <= 0.0):
        raise DomainError("separation must be positive")
    return r


@dataclass(frozen=True)
class PairPotential:
    """Two-body well with minimum -depth at separation rest_length.

    Attributes
    ----------
    rest_length : float
        Location of the minimum, positive.
    depth : float
        Well depth (>= 0); next-nearest bonds use the dimensionless
        next-nearest weight here.
    kind : str
        Potential family; only "lennard_jones_shifted" is implemented.
    """

    rest_length: float
    depth: float = 1.0
    kind: str = LENNARD_JONES_SHIFTED

    def __post_init__(self):
        if self.kind != LENNARD_JONES_SHIFTED:
            raise ConfigurationError(f"unknown pair potential kind {self.kind!r}")
        if not (np.isfinite(self.rest_length) and self.rest_length > 0):
            raise ConfigurationError(f"rest_length must be positive, got {self.rest_length}")
        if not (np.isfinite(self.depth) and self.depth >= 0):
            raise ConfigurationError(f"depth must be nonnegative, got {self.depth}")

    def value(self, r):
        """Potential energy at separation r (scalar or array, r > 0)."""
        r = _validate_separation(r)
        out = self.depth * _reduced_well(r / self.rest_length)
        return float(out) if out.ndim == 0 else out

    def derivative(self, r):
        """d(value)/dr at separation r (scalar or array, r > 0)."""
        r = _validate_separation(r)
        out = (self.depth / self.rest_length) * _reduced_well_derivative(r / self.rest_length)
        return float(out) if out.ndim == 0 else out


def nearest_pair_potential(spacing):
    """Well for nearest-neighbor bonds: minimum -1 at the lattice spacing."""
    return PairPotential(rest_length=float(spacing), depth=1.0)


def next_nearest_pair_potential(spacing, weight):
    """Well for next-nearest bonds: minimum -weight at sqrt(3) * spacing."""
    return PairPotential(rest_length=float(spacing) * math.sqrt(3.0), depth=float(weight))


@dataclass(frozen=True)
class TriplePotential:
    """Angular penalty stiffness * (cos(theta) - cos(rest_angle))**2.

    theta is the angle at a triple's center between its two arms; rest_angle
    must lie in [0, pi].
    """

    stiffness: float
    rest_angle: float

    def __post_init__(self):
        if not (np.isfinite(self.stiffness) and self.stiffness >= 0):
            raise ConfigurationError(f"stiffness must be nonnegative, got {self.stiffness}")
        if not (0.0 <= self.rest_angle <= math.pi):
            raise ConfigurationError(
                f"rest_angle must lie in [0, pi], got {self.rest_angle}"
            )

    @property
    def rest_cosine(self):
        return math.cos(self.rest_angle)

    def value(self, theta):
        """Energy at angle theta in [0, pi] (scalar or array)."""
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < 0.0) or np.any(theta > math.pi):
            raise DomainError("angle must lie in [0, pi]")
        out = self.stiffness * (np.cos(theta) - self.rest_cosine) ** 2
        return float(out) if out.ndim == 0 else out

    def value_from_cosine(self, c):
        """Energy as a function of cos(theta); used by the smooth gradient path."""
        c = np.asarray(c, dtype=float)
        out = self.stiffness * (c - self.rest_cosine) ** 2
        return float(out) if out.ndim == 0 else out

    def derivative_wrt_cosine(self, c):
        c = np.asarray(c, dtype=float)
        out = 2.0 * self.stiffness * (c - self.rest_cosine)
        return float(out) if out.ndim == 0 else out
