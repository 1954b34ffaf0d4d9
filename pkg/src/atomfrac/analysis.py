"""Solver-independent verification and post-processing of evolution traces.

verify_trace re-derives everything from the stored deformations alone: it
rebuilds the memory states step by step, re-evaluates energies, slacks, and
the stationarity residual of each accepted step, and recomputes dissipation
sums.  It shares no intermediate results with the solver, so a corrupted or
inconsistent trace shows up as a violated bound.

stress_strain reports, per step, the reaction force magnitude on the driven
atoms (norm of the summed energy gradient over the driven set, with the
gradient assembled on all atoms including pinned ones) normalized by the
number of bonds incident to the driven set, against the driven displacement
magnitude normalized by the reference span along the stretch direction.

classify_crack fits the reference-space midpoints of fully damaged
nearest-neighbor bonds against the lattice's crystallographic directions and
reports whether they concentrate on one line, on two lines, or neither.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from atomfrac.damage_energy import DamageState, EnergyModel
from atomfrac.errors import ConfigurationError
from atomfrac.lattice import NEAREST
from atomfrac.step_solver import (KELVIN_VOIGT, dissipation_value,
                                  inclusion_residual)


@dataclass(frozen=True)
class VerificationReport:
    """Recomputed invariants of a trace.

    lift_identity_max_error: largest relative change of the pair energy under
    the memory update, over all steps.  inequality_min_slack: smallest margin
    of the per-step stability inequality (negative = violated).
    inclusion_residual_max: largest norm, over steps, of (dissipation rate +
    energy subgradient) on the free slots, the stationarity residual of the
    accepted step; bonds at a branch tie contribute the best admissible
    element of their force interval.  irreversibility_ok also covers
    agreement between stored and recomputed memory.
    """

    steps: int
    lift_identity_max_error: float
    inequality_min_slack: float
    inclusion_residual_max: float
    grad_tol: float
    irreversibility_ok: bool
    all_finite: bool
    dissipation_sum: float

    def ok(self, lift_rtol=1e-12, slack_tol=1e-10):
        return (self.lift_identity_max_error <= lift_rtol
                and self.inequality_min_slack >= -slack_tol
                and self.inclusion_residual_max <= self.grad_tol
                and self.irreversibility_ok
                and self.all_finite)

    def as_dict(self):
        return {
            "steps": self.steps,
            "lift_identity_max_error": self.lift_identity_max_error,
            "inequality_min_slack": self.inequality_min_slack,
            "inclusion_residual_max": self.inclusion_residual_max,
            "grad_tol": self.grad_tol,
            "irreversibility_ok": self.irreversibility_ok,
            "all_finite": self.all_finite,
            "dissipation_sum": self.dissipation_sum,
            "ok": self.ok(),
        }


def verify_trace(trace, system, pots, phis, dissipation, tau):
    """Re-derive and check all invariants of a trace from its deformations."""
    model = EnergyModel(system, pots, phis)
    snaps = trace.snapshots
    if not snaps:
        raise ConfigurationError("trace has no snapshots")
    nn_pairs = system.nearest_pairs() if dissipation.kind == KELVIN_VOIGT else None
    pinned = sorted(system.dirichlet)

    all_finite = all(np.all(np.isfinite(s.y)) for s in snaps)

    state = model.initial_state(snaps[0].y)
    irreversible = bool(np.allclose(state.max_opening, snaps[0].max_opening,
                                    rtol=1e-12, atol=0.0))

    lift_max = 0.0
    slack_min = math.inf if len(snaps) > 1 else 0.0
    residual_max = 0.0
    diss_sum = 0.0

    for prev, snap in zip(snaps, snaps[1:]):
        frozen_pre = model.frozen(state)
        y_k = snap.y
        y_prev = prev.y

        pair_pre, triple_pre = frozen_pre.energy_parts(y_k)

        # stability against the warm-start competitor
        warm = y_prev.copy()
        if pinned:
            warm[pinned] = y_k[pinned]
        lhs = (pair_pre + triple_pre
               + dissipation_value(dissipation, y_k, y_prev, tau,
                                   system.spacing, nn_pairs))
        rhs = (frozen_pre.energy(warm)
               + dissipation_value(dissipation, warm, y_prev, tau,
                                   system.spacing, nn_pairs))
        slack_min = min(slack_min, rhs - lhs)

        # stationarity of the accepted step; tie bonds may contribute any
        # admissible axial force in their one-sided slope interval
        residual, _ = inclusion_residual(system, model, frozen_pre, y_k,
                                         y_prev, tau, dissipation)
        residual_max = max(residual_max, residual)

        # memory update and its energy identity
        new_state = model.update_state(state, y_k)
        pair_post, _ = model.frozen(new_state).energy_parts(y_k)
        lift_max = max(lift_max, abs(pair_pre - pair_post) / max(1.0, abs(pair_pre)))

        if not (np.all(new_state.max_opening >= state.max_opening)
                and np.allclose(new_state.max_opening, snap.max_opening,
                                rtol=1e-12, atol=0.0)):
            irreversible = False

        diss_sum += dissipation_value(dissipation, y_k, y_prev, tau,
                                      system.spacing, nn_pairs)
        state = new_state

    return VerificationReport(
        steps=len(snaps) - 1,
        lift_identity_max_error=lift_max,
        inequality_min_slack=float(slack_min),
        inclusion_residual_max=residual_max,
        grad_tol=trace.grad_tol,
        irreversibility_ok=irreversible,
        all_finite=all_finite,
        dissipation_sum=diss_sum,
    )


@dataclass(frozen=True)
class StressStrainCurve:
    """Per-step normalized reaction force against normalized displacement."""

    steps: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    strain: np.ndarray = field(repr=False)
    stress: np.ndarray = field(repr=False)

    def peak(self):
        i = int(np.argmax(self.stress))
        return float(self.strain[i]), float(self.stress[i])


def stress_strain(trace, system, pots, phis):
    """Reaction-force curve on the driven atoms along a stretching phase.

    The reaction at step k is the energy gradient at the accepted
    deformation with the memory recorded at that state.  A bond that opened
    during the step sits exactly on its kink, where the gradient reports the
    minimal-norm force, so progressive damage shows up as softening of the
    transmitted load.  The gradient is summed over the driven atoms and its
    norm divided by the number of bonds with at least one endpoint in the
    driven set.  Strain is the driven displacement magnitude over the
    reference extent along the schedule direction.
    """
    driven = list(trace.moving_atoms)
    if not driven:
        raise ConfigurationError("trace has no driven atoms")
    model = EnergyModel(system, pots, phis)
    driven_set = set(driven)
    incident = sum(1 for b in system.bonds if b.a in driven_set or b.b in driven_set)
    if incident == 0:
        raise ConfigurationError("no bonds are incident to the driven atoms")

    proj = system.positions @ trace.direction
    span = float(proj.max() - proj.min())
    if span <= 0.0:
        raise ConfigurationError("reference span along the stretch direction is zero")

    snaps = trace.snapshots
    strains = np.empty(len(snaps))
    stresses = np.empty(len(snaps))
    for i, snap in enumerate(snaps):
        frozen = model.frozen(DamageState(max_opening=snap.max_opening))
        grad, _ = frozen.gradient(snap.y)
        reaction = grad[driven].sum(axis=0)
        stresses[i] = float(np.linalg.norm(reaction)) / incident
        disp = (snap.y[driven] - system.positions[driven]).mean(axis=0)
        strains[i] = float(np.linalg.norm(disp)) / span

    return StressStrainCurve(
        steps=np.array([s.step for s in snaps]),
        times=np.array([s.time for s in snaps]),
        strain=strains,
        stress=stresses,
    )


# reference directions of the triangular lattice (unit vectors)
_LATTICE_DIRECTIONS = (
    (1.0, 0.0),
    (0.5, math.sqrt(3.0) / 2.0),
    (-0.5, math.sqrt(3.0) / 2.0),
)


@dataclass(frozen=True)
class CrackDescriptor:
    """Geometry of the final broken-bond set.

    classification is "single_line", "kinked", or "diffuse"; fraction is the
    share of broken nearest-neighbor bond midpoints within the tolerance of
    the fitted line(s); directions/offsets describe the fitted lines (a line
    is the set of points whose projection on the direction's normal equals
    the offset).
    """

    classification: str
    fraction: float
    directions: tuple
    offsets: tuple
    tolerance: float
    broken_bond_ids: tuple


def _best_band(values, tol):
    """Center and coverage count of the best width-2*tol window over values."""
    order = np.sort(values)
    best_count, best_center = 0, float(order[0]) if len(order) else 0.0
    j = 0
    for i in range(len(order)):
        while order[i] - order[j] > 2.0 * tol:
            j += 1
        count = i - j + 1
        if count > best_count:
            best_count = count
            best_center = 0.5 * (order[i] + order[j])
    return best_center, best_count


def classify_crack(trace, system, tolerance=None):
    """Classify the final broken nearest-neighbor bonds of a 2D trace.

    Midpoints are taken in reference coordinates.  Fits try the three
    crystallographic directions; a single line covering at least 90% of the
    midpoints within the tolerance (default 0.3 * spacing) classifies as
    "single_line", a union of two lines as "kinked", anything else as
    "diffuse".  The result depends only on bond geometry, not on atom ids.
    """
    if tolerance is None:
        tolerance = 0.3 * system.spacing
    broken = trace.snapshots[-1].broken_bonds
    nn_broken = [i for i in broken if system.bonds[i].kind == NEAREST]
    if not nn_broken:
        raise ConfigurationError("trace has no broken nearest-neighbor bonds")

    pos = system.positions
    mids = np.array([
        0.5 * (pos[system.bonds[i].a] + pos[system.bonds[i].b]) for i in nn_broken
    ])
    total = len(nn_broken)

    if system.dimension == 1:
        return CrackDescriptor("single_line", 1.0, ((1.0,),), (0.0,),
                               float(tolerance), tuple(nn_broken))

    normals = [np.array([-u[1], u[0]]) for u in _LATTICE_DIRECTIONS]

    best = None  # (fraction, direction index, offset)
    for di, nrm in enumerate(normals):
        c = mids @ nrm
        center, count = _best_band(c, tolerance)
        frac = count / total
        if best is None or frac > best[0]:
            best = (frac, di, center)
    frac1, di1, off1 = best
    if frac1 >= 0.9:
        return CrackDescriptor("single_line", frac1,
                               (_LATTICE_DIRECTIONS[di1],), (off1,),
                               float(tolerance), tuple(nn_broken))

    best2 = None  # (fraction, (di_a, di_b), (off_a, off_b))
    for da, na in enumerate(normals):
        ca = mids @ na
        off_a, _ = _best_band(ca, tolerance)
        covered = np.abs(ca - off_a) <= tolerance
        rest = ~covered
        for db, nb in enumerate(normals):
            cb = mids[rest] @ nb
            if len(cb):
                off_b, extra = _best_band(cb, tolerance)
            else:
                off_b, extra = 0.0, 0
            frac = (int(covered.sum()) + extra) / total
            if best2 is None or frac > best2[0]:
                best2 = (frac, (da, db), (off_a, off_b))
    frac2, (da, db), offs = best2
    if frac2 >= 0.9:
        return CrackDescriptor("kinked", frac2,
                               (_LATTICE_DIRECTIONS[da], _LATTICE_DIRECTIONS[db]),
                               offs, float(tolerance), tuple(nn_broken))

    return CrackDescriptor("diffuse", frac1,
                           (_LATTICE_DIRECTIONS[di1],), (off1,),
                           float(tolerance), tuple(nn_broken))
