"""Shared fixtures: scenario runners and a session-wide preset cache."""

import time
from types import SimpleNamespace

import pytest

from atomfrac.analysis import verify_trace
from atomfrac.evolution import run_evolution
from atomfrac.scenario import (
    build_dissipation,
    build_laws,
    build_schedule,
    build_settings,
    build_system,
    get_preset,
)


def run_scenario(scenario):
    """Build everything from a scenario, run it, and time the run."""
    system = build_system(scenario)
    pots, phis = build_laws(scenario, system)
    schedule = build_schedule(scenario, system)
    dissipation = build_dissipation(scenario)
    settings = build_settings(scenario)
    t0 = time.perf_counter()
    trace = run_evolution(system, pots, phis, system.positions.copy(), schedule,
                          scenario.dynamics.tau, scenario.dynamics.horizon,
                          dissipation, settings=settings)
    wall = time.perf_counter() - t0
    return SimpleNamespace(scenario=scenario, system=system, pots=pots,
                           phis=phis, schedule=schedule,
                           dissipation=dissipation, settings=settings,
                           trace=trace, wall=wall)


@pytest.fixture(scope="session")
def preset_run():
    """Lazy session cache of preset runs: preset_run(name) -> bundle."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_scenario(get_preset(name))
        return cache[name]

    return get


@pytest.fixture(scope="session")
def preset_report(preset_run):
    """Lazy session cache of verification reports per preset."""
    cache = {}

    def get(name):
        if name not in cache:
            b = preset_run(name)
            cache[name] = verify_trace(b.trace, b.system, b.pots, b.phis,
                                       b.dissipation, b.scenario.dynamics.tau)
        return cache[name]

    return get
