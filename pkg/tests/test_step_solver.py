import math

import numpy as np
import pytest

from atomfrac.damage_energy import (
    DamageState,
    EnergyModel,
    PotentialSet,
    TransitionFunction,
    TransitionSet,
)
from atomfrac.errors import ConfigurationError, NonConvergenceError
from atomfrac.lattice import build_chain, build_triangular
from atomfrac.potentials import nearest_pair_potential, next_nearest_pair_potential
from atomfrac.step_solver import (
    KELVIN_VOIGT,
    L2,
    Dissipation,
    SolverSettings,
    _OrientationBarrier,
    dissipation_value,
    inclusion_residual,
    resolve_grad_tol,
    solve_step,
)


def chain_laws(onset=1.2, saturation=1.6):
    return (PotentialSet(nearest=nearest_pair_potential(1.0)),
            TransitionSet(nearest=TransitionFunction(onset, saturation)))


def patch_laws():
    root3 = math.sqrt(3.0)
    return (PotentialSet(nearest=nearest_pair_potential(1.0),
                         next_nearest=next_nearest_pair_potential(1.0, 0.25)),
            TransitionSet(nearest=TransitionFunction(1.2, 1.6),
                          next_nearest=TransitionFunction(1.2 * root3, 1.6 * root3)))


# -- dissipation ---------------------------------------------------------------

def test_l2_dissipation_frozen_value():
    d = Dissipation(L2, 0.1)
    y_prev = np.zeros((1, 1))
    y = np.full((1, 1), 2.0)
    # nu/(2 tau) * |delta|^2 = 0.1 / 1.0 * 4
    assert dissipation_value(d, y, y_prev, 0.5, 1.0) == pytest.approx(0.4)


def test_l2_dissipation_shape_sum():
    d = Dissipation(L2, 2.0)
    y_prev = np.zeros((3, 2))
    y = np.ones((3, 2))
    assert dissipation_value(d, y, y_prev, 1.0, 1.0) == pytest.approx(6.0)


def test_kelvin_voigt_rigid_translation_is_free():
    d = Dissipation(KELVIN_VOIGT, 5.0)
    y_prev = np.arange(4, dtype=float)[:, None]
    y = y_prev + 3.7
    assert dissipation_value(d, y, y_prev, 0.1, 1.0) == 0.0


def test_kelvin_voigt_strain_increments():
    d = Dissipation(KELVIN_VOIGT, 0.2)
    y_prev = np.array([[0.0], [1.0], [2.0]])
    delta = np.array([[0.0], [0.1], [0.3]])
    # strain increments 0.1 and 0.2 over spacing 1: nu/(2 tau) * 0.05
    assert dissipation_value(d, y_prev + delta, y_prev, 0.5, 1.0) == pytest.approx(0.01)


def test_kelvin_voigt_explicit_pairs():
    sys_ = build_triangular(2, 2, 1.0)
    d = Dissipation(KELVIN_VOIGT, 1.0)
    y_prev = sys_.positions
    y = y_prev * 1.01
    pairs = sys_.nearest_pairs()
    val = dissipation_value(d, y, y_prev, 1.0, 1.0, pairs)
    # every nearest bond stretches by 1% of its vector
    want = sum(
        0.5 * np.sum(((y[b] - y[a]) - (y_prev[b] - y_prev[a])) ** 2)
        for a, b in pairs
    )
    assert val == pytest.approx(want, rel=1e-12)


def test_dissipation_validation():
    with pytest.raises(ConfigurationError):
        Dissipation("plastic", 1.0)
    with pytest.raises(ConfigurationError):
        Dissipation(L2, 0.0)
    d = Dissipation(L2, 1.0)
    with pytest.raises(ConfigurationError):
        dissipation_value(d, np.zeros((2, 1)), np.zeros((2, 1)), 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        dissipation_value(d, np.zeros((2, 1)), np.zeros((3, 1)), 1.0, 1.0)


# -- settings ---------------------------------------------------------------------

def test_resolve_grad_tol():
    assert resolve_grad_tol(SolverSettings(grad_tol=1e-6), 100) == 1e-6
    assert resolve_grad_tol(SolverSettings(), 25) == pytest.approx(5e-8)


def test_settings_validation():
    with pytest.raises(ConfigurationError):
        SolverSettings(grad_tol=0.0)
    with pytest.raises(ConfigurationError):
        SolverSettings(max_iters=0)
    with pytest.raises(ConfigurationError):
        SolverSettings(ls_shrink=1.0)
    with pytest.raises(ConfigurationError):
        SolverSettings(accel_memory=-1)
    with pytest.raises(ConfigurationError):
        SolverSettings(orientation_guard="clamp")


# -- one smooth elastic step vs a scalar oracle -------------------------------------

def golden_section(f, lo, hi, tol=1e-12):
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def test_single_free_atom_matches_golden_section():
    sys_ = build_chain(3, 1.0)
    pots, phis = chain_laws()
    model = EnergyModel(sys_, pots, phis)
    state = model.initial_state(sys_.positions)
    y_prev = sys_.positions.copy()
    g_now = sys_.positions.copy()
    g_now[2, 0] += 0.2  # stretch the right end
    tau = 1.0 / 60.0
    diss = Dissipation(L2, 0.1)

    result = solve_step(sys_, pots, phis, state, y_prev, g_now, tau, diss)

    frozen = model.frozen(state)

    def objective(x):
        y = g_now.copy()
        y[1, 0] = x
        return (frozen.energy(y)
                + dissipation_value(diss, y, y_prev, tau, sys_.spacing))

    x_star = golden_section(objective, 1.6, 2.6)
    assert result.y_next[1, 0] == pytest.approx(x_star, abs=1e-7)
    assert result.objective == pytest.approx(objective(x_star), rel=1e-12, abs=1e-12)
    np.testing.assert_array_equal(result.y_next[[0, 2]], g_now[[0, 2]])


def test_random_steps_satisfy_descent_and_stationarity():
    rng = np.random.default_rng(19)
    sys_ = build_chain(5, 1.0)
    pots, phis = chain_laws()
    model = EnergyModel(sys_, pots, phis)
    tau = 1.0 / 30.0
    for kind in (L2, KELVIN_VOIGT):
        diss = Dissipation(kind, 0.1)
        for _ in range(10):
            y_prev = sys_.positions + rng.uniform(-0.05, 0.05, sys_.positions.shape)
            y_prev[0] = sys_.positions[0]
            y_prev[4] = sys_.positions[4]
            state = model.initial_state(y_prev)
            g_now = sys_.positions.copy()
            g_now[4, 0] += rng.uniform(-0.1, 0.3)
            result = solve_step(sys_, pots, phis, state, y_prev, g_now, tau, diss)
            assert result.objective <= result.warm_objective + 1e-10
            grad_tol = resolve_grad_tol(SolverSettings(), 3)
            assert result.residual_norm <= grad_tol
            np.testing.assert_array_equal(result.y_next[[0, 4]], g_now[[0, 4]])


def test_kelvin_voigt_translation_step():
    # translating both pinned ends by the same vector costs no strain
    # dissipation; the solver must ride along exactly
    sys_ = build_chain(4, 1.0)
    pots, phis = chain_laws()
    model = EnergyModel(sys_, pots, phis)
    state = model.initial_state(sys_.positions)
    y_prev = sys_.positions.copy()
    g_now = sys_.positions + 0.4
    diss = Dissipation(KELVIN_VOIGT, 1.0)
    result = solve_step(sys_, pots, phis, state, y_prev, g_now, 0.1, diss)
    np.testing.assert_allclose(result.y_next, sys_.positions + 0.4, atol=1e-7)
    assert dissipation_value(diss, result.y_next, y_prev, 0.1,
                             sys_.spacing) == pytest.approx(0.0, abs=1e-12)


# -- a minimizer resting on a branch crossing ----------------------------------------

def test_step_parks_on_kink():
    # bond 0 is half damaged with memory 1.4 and starts just below it; the
    # fresh bond pulls with a force inside bond 0's kink interval, so the
    # free atom walks up to the crossing r = M and rests exactly on it (any
    # move past it jumps onto the full-slope branch and goes uphill)
    sys_ = build_chain(3, 1.0)
    pots, phis = chain_laws()  # onset 1.2, saturation 1.6 -> phi(1.4) = 0.5
    model = EnergyModel(sys_, pots, phis)
    state = DamageState(np.array([1.4, 1.0]))
    y_prev = sys_.positions.copy()
    y_prev[1, 0] = sys_.positions[0, 0] + 1.39
    y_prev[2, 0] = y_prev[1, 0] + 1.51
    g_now = y_prev.copy()  # pure relaxation step, boundary at rest
    diss = Dissipation(L2, 1e-4)
    result = solve_step(sys_, pots, phis, state, y_prev, g_now, 1.0, diss)
    r0 = result.y_next[1, 0] - result.y_next[0, 0]
    assert r0 == pytest.approx(1.4, abs=1e-9)
    assert 0 in result.tie_bonds
    frozen = model.frozen(state)
    resid, ties = inclusion_residual(sys_, model, frozen, result.y_next, y_prev,
                                     1.0, diss)
    assert resid <= resolve_grad_tol(SolverSettings(), 1)
    assert 0 in ties


def test_inclusion_residual_detects_corruption():
    sys_ = build_chain(4, 1.0)
    pots, phis = chain_laws()
    model = EnergyModel(sys_, pots, phis)
    state = model.initial_state(sys_.positions)
    y_prev = sys_.positions.copy()
    g_now = sys_.positions.copy()
    g_now[3, 0] += 0.1
    diss = Dissipation(L2, 0.1)
    tau = 0.05
    result = solve_step(sys_, pots, phis, state, y_prev, g_now, tau, diss)
    frozen = model.frozen(state)
    ok, _ = inclusion_residual(sys_, model, frozen, result.y_next, y_prev, tau, diss)
    assert ok <= resolve_grad_tol(SolverSettings(), 2)
    bad = result.y_next.copy()
    bad[1, 0] += 1e-3
    worse, _ = inclusion_residual(sys_, model, frozen, bad, y_prev, tau, diss)
    assert worse > 100 * ok


def test_nonconvergence_raises():
    sys_ = build_chain(5, 1.0)
    pots, phis = chain_laws()
    state = EnergyModel(sys_, pots, phis).initial_state(sys_.positions)
    g_now = sys_.positions.copy()
    g_now[4, 0] += 0.5
    with pytest.raises(NonConvergenceError):
        solve_step(sys_, pots, phis, state, sys_.positions.copy(), g_now, 0.1,
                   Dissipation(L2, 0.1), settings=SolverSettings(max_iters=2))


# -- orientation barrier ---------------------------------------------------------

def test_barrier_gradient_matches_fd():
    sys_ = build_triangular(3, 3, 1.0)
    barrier = _OrientationBarrier(sys_, 1e-3)
    rng = np.random.default_rng(2)
    y = sys_.positions + rng.uniform(-0.03, 0.03, sys_.positions.shape)
    g = barrier.gradient(y)
    h = 1e-7
    for atom in (2, 4, 7):
        for d in range(2):
            yp = y.copy()
            yp[atom, d] += h
            ym = y.copy()
            ym[atom, d] -= h
            fd = (barrier.value(yp) - barrier.value(ym)) / (2.0 * h)
            assert g[atom, d] == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_barrier_rejects_flips():
    sys_ = build_triangular(2, 2, 1.0)
    barrier = _OrientationBarrier(sys_, 1.0)
    y = sys_.positions.copy()
    assert np.isfinite(barrier.value(y))
    y[3] = y[0] - (y[3] - y[0])  # reflect one atom through another
    assert barrier.value(y) == np.inf


def test_step_with_barrier_converges():
    sys_ = build_triangular(3, 3, 1.0)
    pots, phis = patch_laws()
    model = EnergyModel(sys_, pots, phis)
    state = model.initial_state(sys_.positions)
    g_now = sys_.positions.copy()
    right = [i for i in sorted(sys_.dirichlet) if sys_.positions[i, 0] > 1.5]
    g_now[right, 0] += 0.05
    settings = SolverSettings(orientation_guard="barrier", barrier_weight=1e-8)
    result = solve_step(sys_, pots, phis, state, sys_.positions.copy(), g_now,
                        1.0 / 60.0, Dissipation(L2, 0.1), settings=settings)
    assert result.objective <= result.warm_objective + 1e-10
