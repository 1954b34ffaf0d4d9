"""Scenario files: a key-value JSON schema describing one simulation.

A scenario fixes the lattice, the damage law, the boundary schedule, the
time discretization, and the solver knobs.  Parsing is strict: unknown keys
and missing required keys raise ScenarioParseError naming the offending key.
write_scenario emits canonical JSON; parse_scenario(write_scenario(s))
reproduces s exactly.

Damage thresholds are configured as multiples of each bond's rest length
("onset_factor", "saturation_factor"), so next-nearest bonds scale their
thresholds with their longer rest length.  A missing saturation_factor
gives a sharp threshold realized as a thin transition band of absolute
width band_width * spacing above the onset.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from atomfrac.damage_energy import PotentialSet, TransitionFunction, TransitionSet
from atomfrac.errors import ScenarioParseError
from atomfrac.evolution import HOLD, LINEAR_RAMP, SINUSOIDAL, BoundarySchedule
from atomfrac.lattice import build_chain, build_triangular
from atomfrac.potentials import (
    TriplePotential,
    nearest_pair_potential,
    next_nearest_pair_potential,
)
from atomfrac.step_solver import Dissipation, SolverSettings


@dataclass(frozen=True)
class LatticeSpec:
    type: str = "chain"                 # "chain" | "triangular"
    count: int = 13                     # chain only
    rows: int = 10                      # triangular only
    cols: int = 15                      # triangular only
    spacing: float = 1.0
    include_nnn: bool = True            # triangular only
    nnn_weight: float = 0.25
    dirichlet: str = None               # defaults per type


@dataclass(frozen=True)
class DamageSpec:
    onset_factor: float = 1.2           # multiple of each bond's rest length
    saturation_factor: float = None     # None -> onset + band_width * spacing
    band_width: float = 1e-6


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = SINUSOIDAL
    amplitude: float = 1.0
    angular_frequency: float = 2.0 * math.pi
    direction_angle: float = 0.0        # radians; ignored for chains
    drive: str = "right"                # "right" | "left" | "none"


@dataclass(frozen=True)
class DynamicsSpec:
    tau: float = 1.0 / 60.0
    horizon: float = 1.0
    viscosity: float = 0.1
    dissipation: str = "l2"             # "l2" | "kelvin_voigt"


@dataclass(frozen=True)
class SolverSpec:
    grad_tol: float = None              # None -> 1e-8 * sqrt(free atoms)
    max_iters: int = 10000
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4
    accel_memory: int = 10
    tie_tol: float = 1e-10
    orientation_guard: str = "off"
    barrier_weight: float = 1e-8


@dataclass(frozen=True)
class ThreeBodySpec:
    enabled: bool = False
    stiffness: float = 0.5
    rest_angle: float = math.pi / 3.0


@dataclass(frozen=True)
class OutputSpec:
    stress_strain: str = "auto"         # "auto" | "always" | "never"


@dataclass(frozen=True)
class Scenario:
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    damage: DamageSpec = field(default_factory=DamageSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    dynamics: DynamicsSpec = field(default_factory=DynamicsSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    three_body: ThreeBodySpec = field(default_factory=ThreeBodySpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    seed: int = None                    # reserved; echoed into output metadata


_SECTIONS = {
    "lattice": LatticeSpec,
    "damage": DamageSpec,
    "schedule": ScheduleSpec,
    "dynamics": DynamicsSpec,
    "solver": SolverSpec,
    "three_body": ThreeBodySpec,
    "output": OutputSpec,
}

_REQUIRED = {"lattice": ("type",), "dynamics": ("tau", "horizon")}


def _coerce_section(name, cls, data):
    if not isinstance(data, dict):
        raise ScenarioParseError(f"section {name!r} must be an object")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ScenarioParseError(f"unknown key {name}.{key}")
    for key in _REQUIRED.get(name, ()):
        if key not in data:
            raise ScenarioParseError(f"missing required key {name}.{key}")
    kwargs = {}
    for key, value in data.items():
        want = known[key].type
        if value is None:
            kwargs[key] = None
            continue
        if want in ("float", float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ScenarioParseError(f"key {name}.{key} must be a number")
            kwargs[key] = float(value)
        elif want in ("int", int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ScenarioParseError(f"key {name}.{key} must be an integer")
            kwargs[key] = value
        elif want in ("bool", bool):
            if not isinstance(value, bool):
                raise ScenarioParseError(f"key {name}.{key} must be true or false")
            kwargs[key] = value
        else:
            if not isinstance(value, str):
                raise ScenarioParseError(f"key {name}.{key} must be a string")
            kwargs[key] = value
    return cls(**kwargs)


def scenario_from_dict(data):
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario must be a JSON object")
    sections = {}
    for key, value in data.items():
        if key == "seed":
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise ScenarioParseError("key seed must be an integer or null")
            sections["seed"] = value
        elif key in _SECTIONS:
            sections[key] = _coerce_section(key, _SECTIONS[key], value)
        else:
            raise ScenarioParseError(f"unknown key {key}")
    if "lattice" not in sections:
        raise ScenarioParseError("missing required key lattice.type")
    if "dynamics" not in sections:
        raise ScenarioParseError("missing required key dynamics.tau")
    scenario = Scenario(**sections)
    _validate(scenario)
    return scenario


def parse_scenario(text):
    """Parse scenario JSON text into a validated Scenario."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"scenario is not valid JSON: {exc}") from None
    return scenario_from_dict(data)


def scenario_to_dict(s):
    return asdict(s)


def write_scenario(s):
    """Canonical JSON text for a scenario (round-trips through parse_scenario)."""
    return json.dumps(scenario_to_dict(s), indent=2, sort_keys=True) + "\n"


def _validate(s):
    lat = s.lattice
    if lat.type not in ("chain", "triangular"):
        raise ScenarioParseError(f"lattice.type must be 'chain' or 'triangular', got {lat.type!r}")
    if lat.type == "chain" and lat.count < 2:
        raise ScenarioParseError("lattice.count must be >= 2")
    if lat.type == "triangular" and (lat.rows < 2 or lat.cols < 2):
        raise ScenarioParseError("lattice.rows and lattice.cols must be >= 2")
    if not lat.spacing > 0:
        raise ScenarioParseError("lattice.spacing must be positive")
    if lat.nnn_weight < 0:
        raise ScenarioParseError("lattice.nnn_weight must be nonnegative")
    dam = s.damage
    if not dam.onset_factor > 1.0:
        raise ScenarioParseError(
            "damage.onset_factor must exceed 1 (the onset must exceed the rest length)")
    if dam.saturation_factor is not None and not dam.saturation_factor >= dam.onset_factor:
        raise ScenarioParseError(
            "damage.saturation_factor must be at least damage.onset_factor")
    if not dam.band_width > 0:
        raise ScenarioParseError("damage.band_width must be positive")
    sch = s.schedule
    if sch.kind not in (SINUSOIDAL, LINEAR_RAMP, HOLD):
        raise ScenarioParseError(f"schedule.kind must be one of "
                                 f"{(SINUSOIDAL, LINEAR_RAMP, HOLD)}, got {sch.kind!r}")
    if sch.drive not in ("right", "left", "none"):
        raise ScenarioParseError("schedule.drive must be 'right', 'left', or 'none'")
    dyn = s.dynamics
    if not dyn.tau > 0:
        raise ScenarioParseError("dynamics.tau must be positive")
    if not dyn.horizon >= 0:
        raise ScenarioParseError("dynamics.horizon must be nonnegative")
    if not dyn.viscosity > 0:
        raise ScenarioParseError("dynamics.viscosity must be positive")
    if dyn.dissipation not in ("l2", "kelvin_voigt"):
        raise ScenarioParseError("dynamics.dissipation must be 'l2' or 'kelvin_voigt'")
    if s.output.stress_strain not in ("auto", "always", "never"):
        raise ScenarioParseError("output.stress_strain must be 'auto', 'always', or 'never'")
    if s.three_body.enabled and s.three_body.stiffness < 0:
        raise ScenarioParseError("three_body.stiffness must be nonnegative")


# -- building runtime objects from a scenario ----------------------------


def build_system(s):
    lat = s.lattice
    if lat.type == "chain":
        spec = lat.dirichlet if lat.dirichlet is not None else "both_ends"
        return build_chain(lat.count, lat.spacing, spec)
    spec = lat.dirichlet if lat.dirichlet is not None else "left_right_columns"
    return build_triangular(lat.rows, lat.cols, lat.spacing,
                            include_nnn=lat.include_nnn, dirichlet_spec=spec)


def _transition_for(rest_length, damage, spacing):
    onset = damage.onset_factor * rest_length
    if damage.saturation_factor is not None:
        saturation = damage.saturation_factor * rest_length
        if saturation <= onset:
            saturation = onset + damage.band_width * spacing
    else:
        saturation = onset + damage.band_width * spacing
    return TransitionFunction(onset=onset, saturation=saturation)


def build_laws(s, system):
    """(PotentialSet, TransitionSet) for a scenario's system."""
    lat = s.lattice
    nearest = nearest_pair_potential(lat.spacing)
    triple = None
    if s.three_body.enabled:
        triple = TriplePotential(stiffness=s.three_body.stiffness,
                                 rest_angle=s.three_body.rest_angle)
    if lat.type == "triangular" and lat.include_nnn:
        nnn = next_nearest_pair_potential(lat.spacing, lat.nnn_weight)
        pots = PotentialSet(nearest=nearest, next_nearest=nnn, triple=triple)
        phis = TransitionSet(
            nearest=_transition_for(lat.spacing, s.damage, lat.spacing),
            next_nearest=_transition_for(nnn.rest_length, s.damage, lat.spacing),
        )
    else:
        pots = PotentialSet(nearest=nearest, triple=triple)
        phis = TransitionSet(
            nearest=_transition_for(lat.spacing, s.damage, lat.spacing))
    return pots, phis


def _moving_fixed(s, system):
    pinned = system.dirichlet
    drive = s.schedule.drive
    if drive == "none" or not pinned:
        return frozenset(), frozenset(pinned)
    if s.lattice.type == "chain":
        side = max(pinned) if drive == "right" else min(pinned)
        if drive == "right" and side == 0 and len(pinned) == 1:
            raise ScenarioParseError("chain pins only its left end; use drive 'left' or 'none'")
        moving = frozenset({side})
    else:
        cols = s.lattice.cols
        wanted = cols - 1 if drive == "right" else 0
        moving = frozenset(i for i in pinned if i % cols == wanted)
        if not moving:
            raise ScenarioParseError(f"no pinned atoms in the {drive} column to drive")
    return moving, frozenset(pinned) - moving


def build_schedule(s, system):
    moving, fixed = _moving_fixed(s, system)
    if system.dimension == 1:
        direction = np.array([1.0])
    else:
        a = s.schedule.direction_angle
        direction = np.array([math.cos(a), math.sin(a)])
    return BoundarySchedule(
        kind=s.schedule.kind,
        reference=system.positions.copy(),
        moving=moving,
        fixed=fixed,
        direction=direction,
        amplitude=s.schedule.amplitude,
        angular_frequency=s.schedule.angular_frequency,
        horizon=s.dynamics.horizon,
    )


def build_dissipation(s):
    return Dissipation(kind=s.dynamics.dissipation, viscosity=s.dynamics.viscosity)


def build_settings(s):
    sol = s.solver
    return SolverSettings(
        grad_tol=sol.grad_tol,
        max_iters=sol.max_iters,
        ls_shrink=sol.ls_shrink,
        ls_c1=sol.ls_c1,
        accel_memory=sol.accel_memory,
        tie_tol=sol.tie_tol,
        orientation_guard=sol.orientation_guard,
        barrier_weight=sol.barrier_weight,
    )


def monotone_stretch(s):
    """Whether the schedule's displacement magnitude is non-decreasing on [0, horizon]."""
    sch = s.schedule
    if sch.drive == "none" or sch.amplitude == 0.0:
        return False
    if sch.kind == LINEAR_RAMP:
        return True
    if sch.kind == SINUSOIDAL:
        quarter = 0.5 * math.pi / abs(sch.angular_frequency) if sch.angular_frequency else math.inf
        return s.dynamics.horizon <= quarter * (1.0 + 1e-12)
    return False


# -- presets ---------------------------------------------------------------

def _preset_1d(dissipation):
    return Scenario(
        lattice=LatticeSpec(type="chain", count=13, spacing=1.0),
        damage=DamageSpec(onset_factor=1.2),
        schedule=ScheduleSpec(kind=SINUSOIDAL, amplitude=2.5,
                              angular_frequency=2.0 * math.pi, drive="right"),
        dynamics=DynamicsSpec(tau=1.0 / 60.0, horizon=1.0, viscosity=0.1,
                              dissipation=dissipation),
    )


def _preset_2d(viscosity, dissipation, angle, horizon=0.5, amplitude=3.0,
               rows=10, cols=15, onset=1.2, saturation=None, tau=1.0 / 60.0,
               stress="auto", max_iters=10000):
    return Scenario(
        lattice=LatticeSpec(type="triangular", rows=rows, cols=cols, spacing=1.0,
                            include_nnn=True, nnn_weight=0.25),
        damage=DamageSpec(onset_factor=onset, saturation_factor=saturation),
        schedule=ScheduleSpec(kind=SINUSOIDAL, amplitude=amplitude,
                              angular_frequency=2.0 * math.pi,
                              direction_angle=angle, drive="right"),
        dynamics=DynamicsSpec(tau=tau, horizon=horizon, viscosity=viscosity,
                              dissipation=dissipation),
        solver=SolverSpec(max_iters=max_iters),
        output=OutputSpec(stress_strain=stress),
    )


def builtin_presets():
    """Named scenarios covering the bundled chain and patch experiments."""
    diag = math.pi / 8.0
    return {
        "paper-1d-l2": _preset_1d("l2"),
        "paper-1d-kv": _preset_1d("kelvin_voigt"),
        # stretch only: the large-viscosity case is a pure horizontal
        # extension, and the interest is the diffuse damage zone
        "paper-2d-horizontal-nu1": _preset_2d(1.0, "kelvin_voigt", 0.0,
                                              horizon=0.25),
        "paper-2d-diag-nu0.01": _preset_2d(0.01, "l2", diag),
        "paper-2d-horizontal-nu0.01": _preset_2d(0.01, "l2", 0.0),
        # the stress comparison varies only the damage onset; a genuine
        # transition band keeps the softening resolvable, the horizon stops
        # while the drive still advances so the tear completes, and the fine
        # step resolves the two distinct instability points
        "paper-stress-strain-R1.2": _preset_2d(
            0.01, "l2", diag, horizon=0.2, amplitude=2.5, rows=7, cols=10,
            onset=1.2, saturation=1.35, tau=1.0 / 240.0, stress="always",
            max_iters=25000),
        "paper-stress-strain-R1.07": _preset_2d(
            0.01, "l2", diag, horizon=0.2, amplitude=2.5, rows=7, cols=10,
            onset=1.07, saturation=1.22, tau=1.0 / 240.0, stress="always",
            max_iters=25000),
    }


def get_preset(name):
    presets = builtin_presets()
    if name not in presets:
        known = ", ".join(sorted(presets))
        raise ScenarioParseError(f"unknown preset {name!r} (known: {known})")
    return presets[name]
