"""Damaged-bond energies with an irreversible per-bond memory variable.

Each bond remembers the largest separation its endpoints have ever reached,
floored at the reference length ("max opening").  A transition function maps
that memory to a damage fraction phi in [0, 1]: zero below an onset opening,
one beyond a saturation opening, linear in between.  The bond energy blends
the elastic well W with its frozen value at the remembered opening,

    e(r; M) = (1 - phi(M)) * W(r) + phi(M) * max(W(r), W(M)),

so an undamaged bond is purely elastic, while a fully damaged bond can never
return into the well below the energy level it once reached: it keeps its
hard-core repulsion but exerts no force on the plateau between the well and
the remembered opening.

Angle triples, when a triple potential is configured, contribute

    W3(theta) * (1 - max(phi(M_arm1), phi(M_arm2)))

so the angular stiffness dies together with either of its arms.

The minimal-norm subgradient of the total energy in the deformation picks,
per bond, the branch scaled by (1 - phi(M)) whenever W(M) >= W(r) and the
plain elastic branch otherwise; at the measure-zero tie W(M) = W(r) the
selected element is the smallest one in the admissible interval, which is
again the (1 - phi(M))-scaled branch.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from atomfrac.errors import ConfigurationError, NumericalError
from atomfrac.lattice import NEAREST, NEXT_NEAREST, LatticeSystem
from atomfrac.potentials import PairPotential, TriplePotential, _reduced_well

DEFAULT_TIE_TOL = 1e-10

THREADS_ENV_VAR = "ATOMFRAC_THREADS"
_PARALLEL_MIN_BONDS = 8192


def assembly_threads():
    """Thread cap for gradient assembly, from the ATOMFRAC_THREADS env var."""
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}"
        ) from None
    if value < 1:
        raise ConfigurationError(f"{THREADS_ENV_VAR} must be >= 1, got {value}")
    return value


@dataclass(frozen=True)
class TransitionFunction:
    """Piecewise-linear damage fraction of the remembered opening.

    Returns 0 at or below ``onset``, 1 at or beyond ``saturation``, and
    interpolates linearly in between.  ``saturation`` must exceed ``onset``
    strictly; a sharp threshold is modeled by a thin transition band.
    """

    onset: float
    saturation: float

    def __post_init__(self):
        if not (np.isfinite(self.onset) and self.onset > 0):
            raise ConfigurationError(f"onset must be positive, got {self.onset}")
        if not (np.isfinite(self.saturation) and self.saturation > self.onset):
            raise ConfigurationError(
                f"saturation must exceed onset ({self.onset}), got {self.saturation}"
            )


def evaluate_phi(phi, opening):
    """Damage fraction of a transition function at one or more openings."""
    m = np.asarray(opening, dtype=float)
    out = np.clip((m - phi.onset) / (phi.saturation - phi.onset), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PotentialSet:
    """Pair potentials per bond kind plus the optional angular potential."""

    nearest: PairPotential
    next_nearest: PairPotential | None = None
    triple: TriplePotential | None = None


@dataclass(frozen=True)
class TransitionSet:
    """Transition functions per bond kind."""

    nearest: TransitionFunction
    next_nearest: TransitionFunction | None = None


@dataclass(frozen=True)
class DamageState:
    """Per-bond memory: the largest separation each bond has reached.

    ``max_opening[i]`` corresponds to ``system.bonds[i]`` and never falls
    below that bond's rest length.  States are immutable; updates return new
    instances.
    """

    max_opening: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.max_opening, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "max_opening", arr)


def _separations(system, y):
    y = np.asarray(y, dtype=float)
    if y.shape != system.positions.shape:
        raise ConfigurationError(
            f"deformation must have shape {system.positions.shape}, got {y.shape}"
        )
    if not np.all(np.isfinite(y)):
        raise NumericalError("deformation contains non-finite entries")
    ia = np.fromiter((b.a for b in system.bonds), dtype=int, count=len(system.bonds))
    ib = np.fromiter((b.b for b in system.bonds), dtype=int, count=len(system.bonds))
    delta = y[ib] - y[ia]
    return np.linalg.norm(delta, axis=1)


def initial_damage_state(system, y0):
    """Memory induced by the initial deformation alone."""
    rest = np.array([b.rest_length for b in system.bonds])
    r = _separations(system, y0)
    return DamageState(np.maximum(rest, r))


def update_memory(system, state, y):
    """Fold the separations of ``y`` into the running per-bond maximum."""
    r = _separations(system, y)
    if len(state.max_opening) != len(system.bonds):
        raise ConfigurationError(
            f"state covers {len(state.max_opening)} bonds, system has {len(system.bonds)}"
        )
    return DamageState(np.maximum(state.max_opening, r))


def bond_energy(potential, phi, opening, r):
    """Energy of a single bond at separation r with remembered opening.

    Parameters
    ----------
    potential : PairPotential
    phi : TransitionFunction
    opening : float
        Remembered largest separation (>= the bond's rest length).
    r : float
        Current separation, positive.
    """
    p = evaluate_phi(phi, opening)
    wr = potential.value(r)
    if p == 0.0:
        return wr
    return (1.0 - p) * wr + p * max(wr, potential.value(opening))


class EnergyModel:
    """Vectorized evaluation tables binding a system to its interaction laws.

    Building the table validates that every bond kind present in the system
    has a pair potential and a transition function, and that each transition
    onset exceeds the rest length of the bonds it governs.
    """

    def __init__(self, system: LatticeSystem, pots: PotentialSet, phis: TransitionSet):
        self.system = system
        self.pots = pots
        self.phis = phis
        nb = len(system.bonds)
        self.bond_a = np.fromiter((b.a for b in system.bonds), dtype=int, count=nb)
        self.bond_b = np.fromiter((b.b for b in system.bonds), dtype=int, count=nb)
        self.rest = np.array([b.rest_length for b in system.bonds], dtype=float)
        depth = np.empty(nb)
        onset = np.empty(nb)
        saturation = np.empty(nb)
        by_kind = {NEAREST: (pots.nearest, phis.nearest),
                   NEXT_NEAREST: (pots.next_nearest, phis.next_nearest)}
        for i, b in enumerate(system.bonds):
            pot, phi = by_kind[b.kind]
            if pot is None or phi is None:
                raise ConfigurationError(
                    f"system has {b.kind} bonds but no potential/transition for them"
                )
            if abs(pot.rest_length - b.rest_length) > 1e-12 * b.rest_length:
                raise ConfigurationError(
                    f"potential rest length {pot.rest_length} does not match "
                    f"{b.kind} bond rest length {b.rest_length}"
                )
            if phi.onset <= b.rest_length:
                raise ConfigurationError(
                    f"transition onset {phi.onset} must exceed the rest length "
                    f"{b.rest_length} of the {b.kind} bonds it governs"
                )
            depth[i] = pot.depth
            onset[i] = phi.onset
            saturation[i] = phi.saturation
        self.depth = depth
        self.onset = onset
        self.saturation = saturation
        self.free_mask = system.free_mask()
        self.free_atom_count = int(self.free_mask.sum())

        self.triple_potential = pots.triple
        nt = len(system.triples) if pots.triple is not None else 0
        self.has_triples = nt > 0
        if self.has_triples:
            bond_index = {(b.a, b.b): i for i, b in enumerate(system.bonds)}
            o1 = np.empty(nt, dtype=int)
            ce = np.empty(nt, dtype=int)
            o2 = np.empty(nt, dtype=int)
            arm1 = np.empty(nt, dtype=int)
            arm2 = np.empty(nt, dtype=int)
            for i, t in enumerate(system.triples):
                o1[i], ce[i], o2[i] = t.outer1, t.center, t.outer2
                try:
                    arm1[i] = bond_index[(min(t.outer1, t.center), max(t.outer1, t.center))]
                    arm2[i] = bond_index[(min(t.outer2, t.center), max(t.outer2, t.center))]
                except KeyError:
                    raise ConfigurationError(
                        f"triple ({t.outer1}, {t.center}, {t.outer2}) has an arm "
                        "that is not a bond of the system"
                    ) from None
            self.t_outer1, self.t_center, self.t_outer2 = o1, ce, o2
            self.t_arm1, self.t_arm2 = arm1, arm2

    # -- elementary vectorized pieces ------------------------------------

    def _check_deformation(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != self.system.positions.shape:
            raise ConfigurationError(
                f"deformation must have shape {self.system.positions.shape}, got {y.shape}"
            )
        return y

    def separations(self, y):
        delta = y[self.bond_b] - y[self.bond_a]
        r = np.linalg.norm(delta, axis=1)
        return delta, r

    def pair_well(self, r):
        s6 = (r / self.rest) ** -6
        return self.depth * (s6 * s6 - 2.0 * s6)

    def pair_well_derivative(self, r):
        s = r / self.rest
        return (self.depth / self.rest) * 12.0 * (s ** -7 - s ** -13)

    def phi(self, opening):
        return np.clip((opening - self.onset) / (self.saturation - self.onset), 0.0, 1.0)

    def initial_state(self, y0):
        y0 = self._check_deformation(y0)
        _, r = self.separations(y0)
        if not np.all(np.isfinite(r)):
            raise NumericalError("initial separations are not finite")
        return DamageState(np.maximum(self.rest, r))

    def update_state(self, state, y):
        y = self._check_deformation(y)
        _, r = self.separations(y)
        if not np.all(np.isfinite(r)):
            raise NumericalError("separations are not finite")
        return DamageState(np.maximum(state.max_opening, r))

    def broken_bonds(self, state):
        """Indices of bonds whose damage fraction has reached 1."""
        return np.nonzero(state.max_opening >= self.saturation)[0]

    def frozen(self, state):
        if len(state.max_opening) != len(self.rest):
            raise ConfigurationError(
                f"state covers {len(state.max_opening)} bonds, "
                f"system has {len(self.rest)}"
            )
        return FrozenStepEnergy(self, state)


class FrozenStepEnergy:
    """Energy with the memory state frozen, as minimized within one step.

    Precomputes everything that depends on the state only: per-bond damage
    fractions, frozen well values at the remembered openings, and per-triple
    damage factors.
    """

    def __init__(self, model: EnergyModel, state: DamageState):
        self.model = model
        self.state = state
        self.phi_m = model.phi(state.max_opening)
        with np.errstate(over="ignore"):
            self.well_m = model.pair_well(state.max_opening)
        if model.has_triples:
            arm_phi = np.maximum(self.phi_m[model.t_arm1], self.phi_m[model.t_arm2])
            self.triple_damage = 1.0 - arm_phi
        self._kinks = None

    # -- energy ----------------------------------------------------------

    def energy_parts(self, y, reject_invalid=True, exclude=None):
        """(pair, triple) energy parts at deformation y.

        With reject_invalid, coincident atoms or non-finite input raise; the
        solver's line search instead maps such states to +inf.  exclude is an
        optional boolean mask of bonds whose pair term is dropped; the contact
        phase of the step solver holds those bonds at a branch crossing where
        their energy is constant.
        """
        m = self.model
        y = m._check_deformation(y)
        finite = np.all(np.isfinite(y))
        if not finite:
            if reject_invalid:
                raise NumericalError("deformation contains non-finite entries")
            return np.inf, 0.0
        _, r = m.separations(y)
        if np.any(r <= 0.0):
            if reject_invalid:
                raise NumericalError("two bonded atoms coincide (zero separation)")
            return np.inf, 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            wr = m.pair_well(r)
            per_bond = (1.0 - self.phi_m) * wr + self.phi_m * np.maximum(wr, self.well_m)
            if exclude is not None:
                per_bond = np.where(exclude, 0.0, per_bond)
            pair = float(np.sum(per_bond))
        if not np.isfinite(pair):
            if reject_invalid:
                raise NumericalError("pair energy overflowed")
            return np.inf, 0.0

        triple = 0.0
        if m.has_triples:
            c, ok = self._triple_cosines(y)
            if not ok:
                if reject_invalid:
                    raise NumericalError("a triple arm has zero length")
                return np.inf, 0.0
            triple = float(np.sum(
                self.triple_damage * m.triple_potential.value_from_cosine(c)
            ))
        return pair, triple

    def energy(self, y, reject_invalid=True, exclude=None):
        pair, triple = self.energy_parts(y, reject_invalid=reject_invalid,
                                         exclude=exclude)
        return pair + triple

    def _triple_cosines(self, y):
        m = self.model
        u = y[m.t_outer1] - y[m.t_center]
        v = y[m.t_outer2] - y[m.t_center]
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        if np.any(nu <= 0.0) or np.any(nv <= 0.0):
            return None, False
        c = np.einsum("ij,ij->i", u, v) / (nu * nv)
        return np.clip(c, -1.0, 1.0), True

    # -- gradient ----------------------------------------------------------

    def _bond_force_coefficients(self, y, tie_tol=DEFAULT_TIE_TOL):
        """Per-bond scalar force coefficient and geometry.

        Returns (delta, r, coef, tie_gap) where the bond contribution to the
        gradient is coef * delta scattered with opposite signs onto the two
        endpoints, and tie_gap = |W(M) - W(r)| detects branch ties.
        """
        m = self.model
        delta, r = m.separations(y)
        if np.any(r <= 0.0) or not np.all(np.isfinite(r)):
            raise NumericalError("two bonded atoms coincide (zero separation)")
        wr = m.pair_well(r)
        wp = m.pair_well_derivative(r)
        tie_gap = np.abs(self.well_m - wr)
        # branch: frozen (scaled by 1 - phi) when the remembered level is at
        # or above the current one, plain elastic otherwise; within the tie
        # tolerance the scaled branch is selected explicitly, being the
        # smallest admissible element
        scaled = (self.well_m >= wr) | (tie_gap <= tie_tol)
        factor = np.where(scaled, 1.0 - self.phi_m, 1.0)
        coef = factor * wp / r
        return delta, r, coef, tie_gap

    def gradient(self, y, tie_tol=DEFAULT_TIE_TOL, exclude=None):
        """Full-length minimal-norm energy subgradient and tie diagnostics.

        Returns (grad, tie_bonds): grad has shape (N, n) with entries for
        every atom including pinned ones; callers restrict to free slots.
        tie_bonds lists bond indices where the branch choice is within
        tie_tol of ambiguous.  exclude drops the listed bonds' contributions
        (see energy_parts).
        """
        m = self.model
        y = m._check_deformation(y)
        if not np.all(np.isfinite(y)):
            raise NumericalError("deformation contains non-finite entries")
        delta, r, coef, tie_gap = self._bond_force_coefficients(y, tie_tol=tie_tol)
        if exclude is not None:
            coef = np.where(exclude, 0.0, coef)
        contributions = _parallel_rowscale(coef, delta)
        grad = np.zeros_like(y)
        np.add.at(grad, m.bond_b, contributions)
        np.subtract.at(grad, m.bond_a, contributions)
        # a tie needs an actual kink: undamaged bonds satisfy W(r) = W(M)
        # trivially at rest but both branches carry the same slope there
        tie_bonds = np.nonzero((tie_gap <= tie_tol) & (self.phi_m > 0.0))[0]

        if m.has_triples:
            u = y[m.t_outer1] - y[m.t_center]
            v = y[m.t_outer2] - y[m.t_center]
            nu = np.linalg.norm(u, axis=1)
            nv = np.linalg.norm(v, axis=1)
            if np.any(nu <= 0.0) or np.any(nv <= 0.0):
                raise NumericalError("a triple arm has zero length")
            c = np.einsum("ij,ij->i", u, v) / (nu * nv)
            dedc = (self.triple_damage
                    * m.triple_potential.derivative_wrt_cosine(c))[:, None]
            gu = v / (nu * nv)[:, None] - u * (c / nu ** 2)[:, None]
            gv = u / (nu * nv)[:, None] - v * (c / nv ** 2)[:, None]
            np.add.at(grad, m.t_outer1, dedc * gu)
            np.add.at(grad, m.t_outer2, dedc * gv)
            np.subtract.at(grad, m.t_center, dedc * (gu + gv))

        return grad, tie_bonds

    def branch_labels(self, y, tie_tol=DEFAULT_TIE_TOL):
        """Per-bond active branch: "memory", "current", or "tie"."""
        _, _, _, tie_gap = self._bond_force_coefficients(
            self.model._check_deformation(y), tie_tol=tie_tol)
        _, r = self.model.separations(y)
        wr = self.model.pair_well(r)
        damaged = self.phi_m > 0.0
        labels = np.where(damaged & (self.well_m >= wr),
                          "memory", "current").astype(object)
        labels[damaged & (tie_gap <= tie_tol)] = "tie"
        return labels

    def kink_table(self):
        """Branch-crossing geometry for bonds with active damage.

        The per-bond energy is non-smooth where W(r) = W(M): at the
        remembered opening itself (r = M) and at its conjugate radius on the
        repulsive side, where the faces of an opened bond come back into
        contact.  A minimizer can sit exactly on such a crossing, with the
        balancing axial force anywhere between the two one-sided slopes
        (1 - phi) * W'(rho) and W'(rho).

        Returns (bond_ids, radii, f_lo, f_hi) where radii has a column per
        crossing (contact radius first) and f_lo <= f_hi bound the force
        interval at each crossing.  Bonds with phi(M) = 0 have no crossing
        and are omitted.
        """
        if self._kinks is None:
            m = self.model
            idx = np.nonzero(self.phi_m > 0.0)[0]
            mem = self.state.max_opening[idx]
            rest = m.rest[idx]
            depth = m.depth[idx]
            s_in = _inner_crossing(mem / rest)
            radii = np.stack([s_in * rest, mem], axis=1)
            s = radii / rest[:, None]
            slope = (depth / rest)[:, None] * 12.0 * (s ** -7.0 - s ** -13.0)
            scaled = (1.0 - self.phi_m[idx])[:, None] * slope
            f_lo = np.minimum(slope, scaled)
            f_hi = np.maximum(slope, scaled)
            self._kinks = (idx, radii, f_lo, f_hi)
        return self._kinks


def _inner_crossing(m_reduced):
    """Repulsive-side radius conjugate to a remembered opening, both reduced.

    For m > 1 solves w(s) = w(m) on (0, 1), where w is the reduced pair well;
    w is strictly decreasing there, so plain bisection converges to machine
    precision.  Vectorized over bonds.
    """
    m_reduced = np.asarray(m_reduced, dtype=float)
    target = _reduced_well(m_reduced)
    lo = np.full_like(m_reduced, 0.2)
    hi = np.ones_like(m_reduced)
    for _ in range(110):
        mid = 0.5 * (lo + hi)
        above = _reduced_well(mid) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def _parallel_rowscale(coef, delta):
    """coef[:, None] * delta, chunked across ATOMFRAC_THREADS threads.

    Per-bond contributions are independent; chunks write disjoint slices of
    the preallocated output, so the result is identical for any thread count
    and the later scatter consumes it in bond-index order.
    """
    threads = assembly_threads()
    nb = coef.shape[0]
    if threads == 1 or nb < _PARALLEL_MIN_BONDS:
        return coef[:, None] * delta
    out = np.empty_like(delta)
    bounds = np.linspace(0, nb, threads + 1, dtype=int)

    def fill(lo, hi):
        np.multiply(coef[lo:hi, None], delta[lo:hi], out=out[lo:hi])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda se: fill(*se), zip(bounds[:-1], bounds[1:])))
    return out


@dataclass(frozen=True)
class Subgradient:
    """Minimal-norm subgradient over the free slots, plus tie diagnostics.

    min_norm is a flat vector over free atoms (in increasing id order, n
    components per atom); tie_bonds lists the bond indices whose branch
    selection was within the tie tolerance.
    """

    min_norm: np.ndarray = field(repr=False)
    tie_bonds: tuple


def total_energy(system, pots, phis, state, y):
    """Total damaged energy at deformation y with the given memory state."""
    model = EnergyModel(system, pots, phis)
    return model.frozen(state).energy(np.asarray(y, dtype=float))


def min_norm_subgradient(system, pots, phis, state, y, tie_tol=DEFAULT_TIE_TOL):
    """Minimal-norm element of the energy subdifferential at y, free slots only."""
    model = EnergyModel(system, pots, phis)
    grad, ties = model.frozen(state).gradient(np.asarray(y, dtype=float), tie_tol=tie_tol)
    return Subgradient(
        min_norm=grad[model.free_mask].reshape(-1),
        tie_bonds=tuple(int(i) for i in ties),
    )
