"""Quasi-static evolutions driven by time-dependent boundary conditions.

A BoundarySchedule prescribes positions for the pinned atoms over a time
window; the free atoms follow by incremental minimization (one solve per
step of length tau).  After each accepted step the per-bond memory absorbs
the new separations.  Two invariants of the scheme are asserted at runtime
on every step and re-checked independently by :mod:`atomfrac.analysis`:

- stability: the accepted step's objective does not exceed the objective of
  the warm start (previous deformation carried to the new boundary values),
  which is exactly the per-step energy estimate the scheme guarantees;
- memory consistency: updating the memory with the accepted deformation
  does not change the pair energy evaluated at that same deformation
  (a new maximum lands on the branch crossover, so both branches agree).

The trace records every accepted deformation together with the memory,
energies, slack, residual and dissipation increment of its step, and can be
turned into the two standard time interpolants: piecewise constant (value
of the next accepted step on each half-open interval) and piecewise affine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from atomfrac.damage_energy import EnergyModel
from atomfrac.errors import (
    ConfigurationError,
    DomainError,
    NonConvergenceError,
    NumericalError,
)
from atomfrac.step_solver import (
    KELVIN_VOIGT,
    SolverSettings,
    dissipation_value,
    resolve_grad_tol,
    solve_step,
)

SINUSOIDAL = "sinusoidal_stretch"
LINEAR_RAMP = "linear_ramp"
HOLD = "hold"
SCHEDULE_KINDS = (SINUSOIDAL, LINEAR_RAMP, HOLD)

# runtime assertion thresholds of the incremental scheme
SLACK_TOL = 1e-10
LIFT_RTOL = 1e-12


@dataclass(frozen=True)
class BoundarySchedule:
    """Prescribed motion of the pinned atoms.

    The moving set is displaced from its reference positions by

        sinusoidal_stretch: amplitude * sin(angular_frequency * t) * direction
        linear_ramp:        amplitude * t * direction
        hold:               0

    while the fixed set stays at its reference positions.  moving and fixed
    must partition the system's pinned set.  At t = 0 every pinned atom sits
    at its reference position.  Sampling outside [0, horizon] (when a
    horizon is set) or at negative times raises DomainError.
    """

    kind: str
    reference: np.ndarray = field(repr=False)
    moving: frozenset
    fixed: frozenset
    direction: np.ndarray = None
    amplitude: float = 0.0
    angular_frequency: float = 0.0
    horizon: float = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        ref = np.asarray(self.reference, dtype=float)
        if ref.ndim != 2:
            raise ConfigurationError("reference positions must have shape (N, n)")
        object.__setattr__(self, "reference", ref)
        if self.moving & self.fixed:
            raise ConfigurationError("moving and fixed sets overlap")
        n = ref.shape[1]
        if self.direction is None:
            direction = np.zeros(n)
            direction[0] = 1.0
        else:
            direction = np.asarray(self.direction, dtype=float)
            if direction.shape != (n,):
                raise ConfigurationError(f"direction must have shape ({n},)")
            norm = np.linalg.norm(direction)
            if norm == 0.0 or not np.isfinite(norm):
                raise ConfigurationError("direction must be a nonzero finite vector")
            direction = direction / norm
        object.__setattr__(self, "direction", direction)
        if not np.isfinite(self.amplitude):
            raise ConfigurationError("amplitude must be finite")

    def pinned_ids(self):
        return self.moving | self.fixed

    def displacement(self, t):
        """Scalar displacement magnitude of the moving set at time t."""
        if self.kind == SINUSOIDAL:
            return self.amplitude * math.sin(self.angular_frequency * t)
        if self.kind == LINEAR_RAMP:
            return self.amplitude * t
        return 0.0

    def values(self, t):
        """Boundary values at time t as a full (N, n) array.

        Pinned slots carry the prescribed positions; free slots are zero
        (only pinned slots are meaningful, matching the convention that
        boundary data extends by zero away from the pinned set).
        """
        tol = 1e-12 * max(1.0, abs(self.horizon or 0.0))
        if t < -tol:
            raise DomainError(f"schedule sampled at negative time {t}")
        if self.horizon is not None and t > self.horizon + tol:
            raise DomainError(f"schedule sampled at {t} beyond horizon {self.horizon}")
        g = np.zeros_like(self.reference)
        fixed = sorted(self.fixed)
        moving = sorted(self.moving)
        if fixed:
            g[fixed] = self.reference[fixed]
        if moving:
            g[moving] = self.reference[moving] + self.displacement(t) * self.direction
        return g


def sample_boundary(schedule, t):
    """Boundary values of a schedule at time t (full array, zero off-boundary)."""
    return schedule.values(t)


@dataclass(frozen=True)
class StepSnapshot:
    """State recorded after one accepted step (step 0 is the initial state).

    energy is the total energy at this deformation with the memory already
    updated by it; objective and warm_objective include the dissipation of
    this step (both zero-filled at step 0); slack = warm_objective -
    objective is the margin of the per-step stability inequality;
    lift_error is the relative pair-energy change under the memory update.
    """

    step: int
    time: float
    y: np.ndarray = field(repr=False)
    max_opening: np.ndarray = field(repr=False)
    energy: float
    objective: float
    warm_objective: float
    slack: float
    residual_norm: float
    iterations: int
    dissipated: float
    lift_error: float
    tie_bonds: tuple
    broken_bonds: tuple


@dataclass(frozen=True)
class EvolutionTrace:
    """Full record of an evolution: times, snapshots, and run metadata."""

    times: np.ndarray = field(repr=False)
    snapshots: tuple
    tau: float
    dissipation: object
    moving_atoms: tuple
    fixed_atoms: tuple
    direction: np.ndarray = field(repr=False)
    grad_tol: float
    truncated: bool = False

    @property
    def broken_bonds(self):
        """Per-step tuples of fully damaged bond indices."""
        return tuple(s.broken_bonds for s in self.snapshots)

    def deformations(self):
        """Array of shape (steps + 1, N, n) of all accepted deformations."""
        return np.stack([s.y for s in self.snapshots])

    def dissipation_sum(self):
        return float(sum(s.dissipated for s in self.snapshots))


def _resolve_steps(horizon, tau):
    if not (np.isfinite(tau) and tau > 0):
        raise ConfigurationError(f"tau must be positive, got {tau}")
    if not (np.isfinite(horizon) and horizon >= 0):
        raise ConfigurationError(f"horizon must be nonnegative, got {horizon}")
    steps = int(round(horizon / tau))
    if abs(steps * tau - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigurationError(
            f"horizon {horizon} is not an integer multiple of tau {tau}"
        )
    return steps


def run_evolution(system, pots, phis, y0, schedule, tau, horizon, dissipation,
                  settings=None):
    """Run the incremental scheme from y0 over [0, horizon] with step tau.

    Returns an EvolutionTrace whose snapshot 0 is the initial state.  Raises
    NonConvergenceError with the partial trace attached if a step fails, and
    NumericalError if a runtime invariant of the scheme is violated.
    """
    if settings is None:
        settings = SolverSettings()
    steps = _resolve_steps(horizon, tau)
    model = EnergyModel(system, pots, phis)

    if schedule.pinned_ids() != system.dirichlet:
        raise ConfigurationError(
            "schedule moving+fixed sets must partition the system's pinned set"
        )

    y0 = np.asarray(y0, dtype=float)
    if y0.shape != system.positions.shape:
        raise ConfigurationError(
            f"y0 must have shape {system.positions.shape}, got {y0.shape}"
        )
    pinned = sorted(system.dirichlet)
    g0 = schedule.values(0.0)
    if pinned and not np.allclose(y0[pinned], g0[pinned], rtol=0.0, atol=1e-12):
        raise ConfigurationError(
            "y0 does not match the boundary values at t = 0 on the pinned atoms"
        )

    state = model.initial_state(y0)
    frozen0 = model.frozen(state)
    e0 = frozen0.energy(y0)
    grad_tol = resolve_grad_tol(settings, model.free_atom_count)
    nn_pairs = system.nearest_pairs() if dissipation.kind == KELVIN_VOIGT else None

    snapshots = [StepSnapshot(
        step=0, time=0.0, y=y0.copy(), max_opening=state.max_opening.copy(),
        energy=e0, objective=e0, warm_objective=e0, slack=0.0,
        residual_norm=0.0, iterations=0, dissipated=0.0, lift_error=0.0,
        tie_bonds=(), broken_bonds=tuple(int(i) for i in model.broken_bonds(state)),
    )]

    times = np.arange(steps + 1) * tau
    y_prev = y0

    def build_trace(truncated=False):
        return EvolutionTrace(
            times=times[: len(snapshots)],
            snapshots=tuple(snapshots),
            tau=tau,
            dissipation=dissipation,
            moving_atoms=tuple(sorted(schedule.moving)),
            fixed_atoms=tuple(sorted(schedule.fixed)),
            direction=schedule.direction.copy(),
            grad_tol=grad_tol,
            truncated=truncated,
        )

    for k in range(1, steps + 1):
        t_k = times[k]
        g_now = schedule.values(t_k)
        try:
            result = solve_step(system, pots, phis, state, y_prev, g_now, tau,
                                dissipation, settings=settings, model=model)
        except NonConvergenceError as exc:
            exc.partial_trace = build_trace(truncated=True)
            raise

        slack = result.warm_objective - result.objective
        if slack < -SLACK_TOL:
            raise NumericalError(
                f"step {k}: accepted objective exceeds the warm-start objective "
                f"(slack {slack:.3e})"
            )

        y_k = result.y_next
        frozen_pre = model.frozen(state)
        pair_pre, triple_pre = frozen_pre.energy_parts(y_k)
        state = model.update_state(state, y_k)
        frozen_post = model.frozen(state)
        pair_post, triple_post = frozen_post.energy_parts(y_k)
        lift_error = abs(pair_pre - pair_post) / max(1.0, abs(pair_pre))
        if lift_error > LIFT_RTOL:
            raise NumericalError(
                f"step {k}: pair energy changed under the memory update "
                f"(relative error {lift_error:.3e})"
            )

        dissipated = dissipation_value(dissipation, y_k, y_prev, tau,
                                       system.spacing, nn_pairs)
        snapshots.append(StepSnapshot(
            step=k, time=float(t_k), y=y_k.copy(),
            max_opening=state.max_opening.copy(),
            energy=pair_post + triple_post,
            objective=result.objective,
            warm_objective=result.warm_objective,
            slack=slack,
            residual_norm=result.residual_norm,
            iterations=result.iterations,
            dissipated=dissipated,
            lift_error=lift_error,
            tie_bonds=result.tie_bonds,
            broken_bonds=tuple(int(i) for i in model.broken_bonds(state)),
        ))
        y_prev = y_k

    return build_trace()


class PiecewiseConstantPath:
    """Right-limit interpolant: value y_{k+1} on (t_k, t_{k+1}], y_0 at 0."""

    def __init__(self, times, deformations):
        self.times = np.asarray(times, dtype=float)
        self.deformations = deformations

    def __call__(self, t):
        self._check(t)
        idx = int(np.searchsorted(self.times, t, side="left"))
        return self.deformations[min(idx, len(self.deformations) - 1)]

    def _check(self, t):
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise DomainError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")


class PiecewiseAffinePath:
    """Linear interpolant between consecutive accepted deformations."""

    def __init__(self, times, deformations):
        self.times = np.asarray(times, dtype=float)
        self.deformations = deformations

    def __call__(self, t):
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise DomainError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        if len(self.times) == 1:
            return self.deformations[0]
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 2)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        w = min(max(w, 0.0), 1.0)
        return (1.0 - w) * self.deformations[k] + w * self.deformations[k + 1]


def interpolants(trace):
    """(piecewise constant, piecewise affine) time interpolants of a trace."""
    ys = trace.deformations()
    return (PiecewiseConstantPath(trace.times, ys),
            PiecewiseAffinePath(trace.times, ys))


@dataclass(frozen=True)
class TauStudyReport:
    """Step-size refinement diagnostics.

    taus are sorted coarse to fine.  sup_distances[i] is the sup over the
    union time grid of the norm of the difference between the affine
    interpolants for taus[i] and taus[i+1].  For each tau the report carries
    the dissipation sum, the telescoped upper bound assembled from the
    per-step warm-start objectives (the a-priori estimate; the sum is below
    it by construction), and the largest observed boundary-increment energy
    quotient (a realized Lipschitz constant, reported for diagnostics).
    """

    taus: tuple
    traces: tuple
    sup_distances: tuple
    dissipation_sums: tuple
    bound_values: tuple
    observed_lipschitz: tuple


def refine_tau_study(system, pots, phis, y0, schedule, horizon, dissipation,
                     taus, settings=None):
    """Run the same evolution at several step sizes and compare the paths."""
    if len(taus) < 2:
        raise ConfigurationError("a step-size study needs at least two tau values")
    taus = tuple(sorted(set(float(t) for t in taus), reverse=True))
    nn_pairs = system.nearest_pairs() if dissipation.kind == KELVIN_VOIGT else None

    traces = []
    sums = []
    bounds = []
    lipschitz = []
    for tau in taus:
        trace = run_evolution(system, pots, phis, y0, schedule, tau, horizon,
                              dissipation, settings=settings)
        traces.append(trace)
        sums.append(trace.dissipation_sum())
        bound = trace.snapshots[0].energy - trace.snapshots[-1].energy
        lip = 0.0
        for prev, snap in zip(trace.snapshots, trace.snapshots[1:]):
            bound += snap.warm_objective - prev.energy
            dg = schedule.values(snap.time) - schedule.values(prev.time)
            dg_norm = float(np.linalg.norm(dg))
            if dg_norm > 0.0:
                warm_energy = snap.warm_objective - dissipation_value(
                    dissipation, prev.y + dg, prev.y, tau, system.spacing, nn_pairs)
                lip = max(lip, (warm_energy - prev.energy) / dg_norm)
        bounds.append(bound)
        lipschitz.append(lip)

    distances = []
    for coarse, fine in zip(traces, traces[1:]):
        _, affine_c = interpolants(coarse)
        _, affine_f = interpolants(fine)
        grid = np.union1d(coarse.times, fine.times)
        gap = 0.0
        for t in grid:
            gap = max(gap, float(np.linalg.norm(affine_c(t) - affine_f(t))))
        distances.append(gap)

    return TauStudyReport(
        taus=taus,
        traces=tuple(traces),
        sup_distances=tuple(distances),
        dissipation_sums=tuple(sums),
        bound_values=tuple(bounds),
        observed_lipschitz=tuple(lipschitz),
    )
