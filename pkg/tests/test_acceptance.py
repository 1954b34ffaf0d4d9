"""End-to-end acceptance battery.

One test per guaranteed property, each at its pinned tolerance and
runtime budget.  The preset runs are shared through the session-scoped
cache in conftest, so every wall-clock figure below is the cost of the
underlying cold run, counted once.
"""

import math
import time

import numpy as np
import pytest

from atomfrac.analysis import classify_crack, stress_strain, verify_trace
from atomfrac.damage_energy import (
    DamageState,
    EnergyModel,
    PotentialSet,
    TransitionFunction,
    TransitionSet,
    min_norm_subgradient,
    total_energy,
)
from atomfrac.evolution import (
    LINEAR_RAMP,
    SINUSOIDAL,
    BoundarySchedule,
    refine_tau_study,
    run_evolution,
)
from atomfrac.lattice import build_chain, build_triangular
from atomfrac.potentials import (
    TriplePotential,
    nearest_pair_potential,
    next_nearest_pair_potential,
)
from atomfrac.scenario import builtin_presets
from atomfrac.step_solver import Dissipation

ALL_PRESETS = tuple(sorted(builtin_presets()))

LIFT_RTOL = 1e-12
SLACK_TOL = 1e-10


def random_chain_run(rng):
    """One random small chain under a random admissible stretching schedule."""
    count = int(rng.integers(3, 11))
    sys_ = build_chain(count, 1.0)
    saturation = 1.2 + float(rng.uniform(1e-6, 0.3))
    pots = PotentialSet(nearest=nearest_pair_potential(1.0))
    phis = TransitionSet(nearest=TransitionFunction(1.2, saturation))
    tau = float(rng.choice([0.05, 0.1]))
    horizon = int(rng.integers(2, 6)) * tau
    right = max(sys_.dirichlet)
    sched = BoundarySchedule(
        kind=SINUSOIDAL if rng.random() < 0.5 else LINEAR_RAMP,
        reference=sys_.positions,
        moving=frozenset({right}),
        fixed=frozenset(sys_.dirichlet - {right}),
        direction=np.ones(1),
        amplitude=float(rng.uniform(0.05, 0.35 * (count - 1))),
        angular_frequency=2.0 * math.pi,
    )
    diss = Dissipation("l2" if rng.random() < 0.5 else "kelvin_voigt",
                       float(10.0 ** rng.uniform(-2, 0)))
    trace = run_evolution(sys_, pots, phis, sys_.positions.copy(), sched,
                          tau, horizon, diss)
    return sys_, pots, phis, diss, tau, trace


def test_memory_update_preserves_step_energy(preset_run, preset_report):
    """Re-evaluating the energy after the memory update never changes it."""
    wall = 0.0
    for name in ALL_PRESETS:
        wall += preset_run(name).wall
        report = preset_report(name)
        assert report.lift_identity_max_error <= LIFT_RTOL, name

    rng = np.random.default_rng(93)
    t0 = time.perf_counter()
    for _ in range(50):
        sys_, pots, phis, diss, tau, trace = random_chain_run(rng)
        report = verify_trace(trace, sys_, pots, phis, diss, tau)
        assert report.lift_identity_max_error <= LIFT_RTOL
    wall += time.perf_counter() - t0
    assert wall < 60.0, f"lift battery took {wall:.1f}s"


def test_accepted_steps_never_lose_to_warm_start(preset_report):
    """Stability margin of every accepted step on every preset."""
    for name in ALL_PRESETS:
        report = preset_report(name)
        assert report.inequality_min_slack >= -SLACK_TOL, name


def test_bond_memory_never_decreases(preset_run, preset_report):
    """Per-bond running maximum is monotone and floored at the rest length."""
    for name in ALL_PRESETS:
        b = preset_run(name)
        rest = np.array([bond.rest_length for bond in b.system.bonds])
        snaps = b.trace.snapshots
        for snap in snaps:
            assert np.all(snap.max_opening >= rest), name
        for prev, snap in zip(snaps, snaps[1:]):
            assert np.all(snap.max_opening >= prev.max_opening), name
        assert preset_report(name).irreversibility_ok, name


def test_accepted_steps_are_stationary(preset_run, preset_report):
    """Dissipation rate plus a selected subgradient vanishes within grad_tol."""
    for name in ALL_PRESETS:
        b = preset_run(name)
        expected_tol = 1e-8 * math.sqrt(len(b.system.free_atoms))
        assert b.trace.grad_tol == pytest.approx(expected_tol, rel=1e-12), name
        report = preset_report(name)
        assert report.inclusion_residual_max <= b.trace.grad_tol, name


# -- gradient oracle ---------------------------------------------------------

def conjugate_radius(pot, m):
    """Separation below rest with the same pair energy as the opening m."""
    lo, hi = 0.2 * pot.rest_length, pot.rest_length
    target = float(pot.value(np.array([m]))[0])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(pot.value(np.array([mid]))[0]) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fd_free_gradient(system, pots, phis, state, y, h=1e-6):
    free_slots = np.flatnonzero(system.free_mask().repeat(system.dimension))
    flat = y.reshape(-1)
    out = np.empty(len(free_slots))
    for j, idx in enumerate(free_slots):
        up = flat.copy()
        up[idx] += h
        dn = flat.copy()
        dn[idx] -= h
        out[j] = (total_energy(system, pots, phis, state, up.reshape(y.shape))
                  - total_energy(system, pots, phis, state, dn.reshape(y.shape))
                  ) / (2.0 * h)
    return out


def random_tie_free_config(system, pots, phis, rng, margin=1e-5):
    """(state, y) with every damaged bond away from both of its kinks."""
    model = EnergyModel(system, pots, phis)
    rest = np.array([b.rest_length for b in system.bonds])
    for _ in range(100):
        mem = np.where(rng.random(len(rest)) < 0.4, rest,
                       rest * rng.uniform(1.0, 1.8, len(rest)))
        mem = np.maximum(mem, rest)
        y = system.positions + rng.uniform(-0.15, 0.15, system.positions.shape)
        state = DamageState(max_opening=mem)
        _, r = model.separations(y)
        damage = model.phi(mem)
        clean = True
        for i, b in enumerate(system.bonds):
            if damage[i] == 0.0:
                continue
            pot = pots.nearest if b.kind == "nearest" else pots.next_nearest
            r_in = conjugate_radius(pot, mem[i])
            if (abs(r[i] - mem[i]) < margin * rest[i]
                    or abs(r[i] - r_in) < margin * rest[i]):
                clean = False
                break
        if clean:
            return state, y
    raise AssertionError("could not sample a tie-free configuration")


def test_subgradient_matches_finite_differences():
    """Minimal-norm subgradient against central differences, 100 configs."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(409)

    chain = build_chain(6, 1.0)
    chain_pots = PotentialSet(nearest=nearest_pair_potential(1.0))
    patch = build_triangular(3, 3, 1.0, dirichlet_spec="none")
    nnn = next_nearest_pair_potential(1.0, 0.25)
    patch_flat = PotentialSet(nearest=nearest_pair_potential(1.0),
                              next_nearest=nnn)
    patch_bent = PotentialSet(nearest=nearest_pair_potential(1.0),
                              next_nearest=nnn,
                              triple=TriplePotential(stiffness=0.5,
                                                     rest_angle=math.pi / 3.0))
    chain_phis = TransitionSet(nearest=TransitionFunction(1.2, 1.6))
    patch_phis = TransitionSet(
        nearest=TransitionFunction(1.2, 1.6),
        next_nearest=TransitionFunction(1.2 * nnn.rest_length,
                                        1.6 * nnn.rest_length))

    cells = ([(chain, chain_pots, chain_phis)] * 34
             + [(patch, patch_flat, patch_phis)] * 33
             + [(patch, patch_bent, patch_phis)] * 33)
    for system, pots, phis in cells:
        state, y = random_tie_free_config(system, pots, phis, rng)
        sub = min_norm_subgradient(system, pots, phis, state, y)
        assert sub.tie_bonds == ()
        fd = fd_free_gradient(system, pots, phis, state, y)
        np.testing.assert_allclose(sub.min_norm, fd, rtol=1e-5, atol=1e-8)
    wall = time.perf_counter() - t0
    assert wall < 30.0, f"gradient oracle took {wall:.1f}s"


# -- step-size refinement ------------------------------------------------------

def test_paths_converge_under_step_refinement():
    """Affine interpolants contract and dissipation stays comparable."""
    t0 = time.perf_counter()
    sys_ = build_chain(13, 1.0)
    pots = PotentialSet(nearest=nearest_pair_potential(1.0))
    phis = TransitionSet(nearest=TransitionFunction(1.2, 1.6))
    right = max(sys_.dirichlet)
    sched = BoundarySchedule(
        kind=SINUSOIDAL, reference=sys_.positions, moving=frozenset({right}),
        fixed=frozenset(sys_.dirichlet - {right}), direction=np.ones(1),
        amplitude=0.3, angular_frequency=2.0 * math.pi)
    report = refine_tau_study(sys_, pots, phis, sys_.positions.copy(), sched,
                              0.5, Dissipation("l2", 0.1),
                              [1 / 30, 1 / 60, 1 / 120, 1 / 240])

    for trace in report.traces:  # the whole study stays below the damage onset
        assert all(np.all(s.max_opening < 1.2) for s in trace.snapshots)
    d = report.sup_distances
    assert d[0] > d[1] > d[2] > 0.0
    coarsest = report.dissipation_sums[0]
    for s in report.dissipation_sums:
        assert 0.5 * coarsest <= s <= 2.0 * coarsest
    wall = time.perf_counter() - t0
    assert wall < 120.0, f"refinement study took {wall:.1f}s"


# -- qualitative fracture reproduction ----------------------------------------


def broken_during_first_extension(bundle):
    """Union of broken bonds over the first half period of the drive."""
    omega = bundle.scenario.schedule.angular_frequency
    t_end = math.pi / omega
    out = set()
    for snap in bundle.trace.snapshots:
        if snap.time <= t_end + 1e-12:
            out.update(snap.broken_bonds)
    return out


def test_chain_l2_breaks_only_the_bond_at_the_driven_end(preset_run):
    b = preset_run("paper-1d-l2")
    assert b.wall < 10.0, f"run took {b.wall:.1f}s"
    broken = broken_during_first_extension(b)
    assert len(broken) == 1
    bond = b.system.bonds[broken.pop()]
    driven = max(b.trace.moving_atoms)
    assert bond.b == driven  # the bond adjacent to the pulled atom


def test_chain_kelvin_voigt_breaks_exactly_one_bond(preset_run):
    b = preset_run("paper-1d-kv")
    assert b.wall < 10.0, f"run took {b.wall:.1f}s"
    assert len(broken_during_first_extension(b)) == 1


def test_diagonal_pull_cracks_along_one_lattice_line(preset_run):
    b = preset_run("paper-2d-diag-nu0.01")
    assert b.wall < 300.0, f"run took {b.wall:.1f}s"
    desc = classify_crack(b.trace, b.system)
    assert desc.tolerance == pytest.approx(0.3 * b.system.spacing)
    assert desc.classification == "single_line"
    assert desc.fraction >= 0.9


def test_high_viscosity_damage_is_not_a_single_line(preset_run):
    b = preset_run("paper-2d-horizontal-nu1")
    assert b.wall < 300.0, f"run took {b.wall:.1f}s"
    desc = classify_crack(b.trace, b.system)
    assert desc.classification != "single_line"


def test_lower_damage_onset_lowers_the_peak_stress(preset_run):
    b_lo = preset_run("paper-stress-strain-R1.07")
    b_hi = preset_run("paper-stress-strain-R1.2")
    assert b_lo.wall + b_hi.wall < 120.0, \
        f"stress pair took {b_lo.wall + b_hi.wall:.1f}s"

    peaks = {}
    for key, b in (("lo", b_lo), ("hi", b_hi)):
        curve = stress_strain(b.trace, b.system, b.pots, b.phis)
        strain_peak, stress_peak = curve.peak()
        assert stress_peak > 0.0
        # almost linear over the first half of the rising branch
        window = curve.strain <= 0.5 * strain_peak
        assert window.sum() >= 3
        r = np.corrcoef(curve.strain[window], curve.stress[window])[0, 1]
        assert r >= 0.98, f"{key}: Pearson {r:.5f}"
        # after complete fracture the transmitted load collapses
        assert curve.stress[-1] <= 0.05 * stress_peak
        peaks[key] = stress_peak

    assert peaks["lo"] < peaks["hi"]
