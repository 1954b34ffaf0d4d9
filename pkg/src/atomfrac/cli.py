"""Command-line interface.

    atomfrac run SCENARIO.json [--out DIR]
    atomfrac tau-study SCENARIO.json --taus 0.033333,0.016667,0.008333 [--out DIR]
    atomfrac presets list
    atomfrac presets emit NAME [--out FILE]

``run`` writes, into the output directory:

    trajectory.csv     step,time,atom,x[,y]          one row per atom per step
    bonds.csv          step,bond,atom_a,atom_b,kind,separation,max_opening,
                       damage,branch                 one row per bond per step
    verify.json        recomputed invariants plus run metadata
    stress_strain.csv  step,time,strain,stress       when a stretching phase
                                                     is configured

Floats are written with 17 significant digits; identical scenarios produce
byte-identical outputs on the same platform.  The ``branch`` column labels
the force branch of each bond at that step against the memory entering the
step ("current" elastic, "memory" frozen, "tie" on the crossover); the
``damage`` column is the damage fraction of the memory after the step.
Exit codes: 0 success, 2 scenario error, 3 solver non-convergence (partial
outputs are still written, flagged as truncated in verify.json).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

import atomfrac
from atomfrac.analysis import classify_crack, stress_strain, verify_trace
from atomfrac.damage_energy import EnergyModel
from atomfrac.errors import (
    ConfigurationError,
    NonConvergenceError,
    NumericalError,
    ScenarioParseError,
)
from atomfrac.evolution import refine_tau_study, run_evolution
from atomfrac.scenario import (
    build_dissipation,
    build_laws,
    build_schedule,
    build_settings,
    build_system,
    builtin_presets,
    get_preset,
    monotone_stretch,
    parse_scenario,
    scenario_to_dict,
    write_scenario,
)


def _fmt(x):
    return format(float(x), ".17g")


def _load_scenario(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file {path}: {exc}") from None
    return parse_scenario(text)


def _adjust_horizon(scenario):
    """Round the horizon to an integer number of steps, warning on stderr."""
    dyn = scenario.dynamics
    steps = max(1, int(round(dyn.horizon / dyn.tau)))
    adjusted = steps * dyn.tau
    if abs(adjusted - dyn.horizon) > 1e-9 * max(1.0, dyn.horizon):
        print(f"warning: horizon {dyn.horizon} rounded to {adjusted} "
              f"({steps} steps of {dyn.tau})", file=sys.stderr)
        from dataclasses import replace
        scenario = replace(scenario, dynamics=replace(dyn, horizon=adjusted))
    return scenario


def _write_trajectory(path, trace, system):
    n = system.positions.shape[1]
    cols = ["x", "y"][:n]
    lines = ["step,time,atom," + ",".join(cols)]
    for snap in trace.snapshots:
        t = _fmt(snap.time)
        for atom in range(system.atom_count):
            coords = ",".join(_fmt(c) for c in snap.y[atom])
            lines.append(f"{snap.step},{t},{atom},{coords}")
    path.write_text("\n".join(lines) + "\n")


def _write_bonds(path, trace, system, pots, phis):
    model = EnergyModel(system, pots, phis)
    lines = ["step,bond,atom_a,atom_b,kind,separation,max_opening,damage,branch"]
    state = model.initial_state(trace.snapshots[0].y)
    for snap in trace.snapshots:
        frozen = model.frozen(state)  # memory entering this step
        labels = frozen.branch_labels(snap.y)
        _, r = model.separations(snap.y)
        damage = model.phi(snap.max_opening)
        t = _fmt(snap.time)
        for i, b in enumerate(system.bonds):
            lines.append(
                f"{snap.step},{i},{b.a},{b.b},{b.kind},{_fmt(r[i])},"
                f"{_fmt(snap.max_opening[i])},{_fmt(damage[i])},{labels[i]}"
            )
        state = model.update_state(state, snap.y)
    path.write_text("\n".join(lines) + "\n")


def _write_stress_strain(path, curve):
    lines = ["step,time,strain,stress"]
    for s, t, eps, sig in zip(curve.steps, curve.times, curve.strain, curve.stress):
        lines.append(f"{int(s)},{_fmt(t)},{_fmt(eps)},{_fmt(sig)}")
    path.write_text("\n".join(lines) + "\n")


def _run_metadata(scenario, system, trace):
    return {
        "package_version": atomfrac.__version__,
        "scenario": scenario_to_dict(scenario),
        "conventions": {
            "atom_numbering": "construction order; pinned atoms keep their ids",
            "pinned_atoms": sorted(int(i) for i in system.dirichlet),
            "driven_atoms": [int(i) for i in trace.moving_atoms],
            "stress": "norm of the summed energy gradient over the driven atoms "
                      "(assembled on all atoms) divided by the number of bonds "
                      "incident to the driven set",
            "strain": "driven displacement magnitude over the reference span "
                      "along the schedule direction",
        },
    }


def cmd_run(args):
    scenario = _adjust_horizon(_load_scenario(args.scenario))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    system = build_system(scenario)
    pots, phis = build_laws(scenario, system)
    schedule = build_schedule(scenario, system)
    dissipation = build_dissipation(scenario)
    settings = build_settings(scenario)
    y0 = system.positions.copy()

    trace = None
    failure = None
    try:
        trace = run_evolution(system, pots, phis, y0, schedule,
                              scenario.dynamics.tau, scenario.dynamics.horizon,
                              dissipation, settings=settings)
    except NonConvergenceError as exc:
        trace = exc.partial_trace
        failure = str(exc)
        if trace is None:
            print(f"error: {exc}", file=sys.stderr)
            return 3

    _write_trajectory(out / "trajectory.csv", trace, system)
    _write_bonds(out / "bonds.csv", trace, system, pots, phis)

    report = verify_trace(trace, system, pots, phis, dissipation,
                          scenario.dynamics.tau)
    payload = report.as_dict()
    payload["truncated"] = trace.truncated
    if failure is not None:
        payload["failure"] = failure
    final_broken = trace.snapshots[-1].broken_bonds
    payload["broken_bonds_final"] = [int(i) for i in final_broken]
    if system.dimension == 2 and any(
            system.bonds[i].kind == "nearest" for i in final_broken):
        crack = classify_crack(trace, system)
        payload["crack"] = {
            "classification": crack.classification,
            "fraction_on_line": crack.fraction,
            "directions": [list(d) for d in crack.directions],
            "offsets": list(crack.offsets),
        }
    payload["meta"] = _run_metadata(scenario, system, trace)
    (out / "verify.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")

    emit = scenario.output.stress_strain
    if trace.moving_atoms and (emit == "always"
                               or (emit == "auto" and monotone_stretch(scenario))):
        curve = stress_strain(trace, system, pots, phis)
        _write_stress_strain(out / "stress_strain.csv", curve)

    if failure is not None:
        print(f"error: {failure}", file=sys.stderr)
        print(f"partial outputs written to {out}", file=sys.stderr)
        return 3
    if not report.ok():
        print("warning: verification reported violations; see verify.json",
              file=sys.stderr)
    print(f"wrote {out}/trajectory.csv ({len(trace.snapshots)} steps, "
          f"{system.atom_count} atoms)")
    return 0


def cmd_tau_study(args):
    scenario = _load_scenario(args.scenario)
    try:
        taus = [float(v) for v in args.taus.split(",") if v.strip()]
    except ValueError:
        raise ScenarioParseError(f"--taus must be a comma-separated list of numbers, "
                                 f"got {args.taus!r}") from None
    if len(taus) < 3:
        raise ScenarioParseError("--taus needs at least 3 values")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    system = build_system(scenario)
    pots, phis = build_laws(scenario, system)
    schedule = build_schedule(scenario, system)
    dissipation = build_dissipation(scenario)
    settings = build_settings(scenario)

    report = refine_tau_study(system, pots, phis, system.positions.copy(),
                              schedule, scenario.dynamics.horizon, dissipation,
                              taus, settings=settings)
    payload = {
        "taus": list(report.taus),
        "sup_distances": list(report.sup_distances),
        "dissipation_sums": list(report.dissipation_sums),
        "bound_values": list(report.bound_values),
        "observed_lipschitz": list(report.observed_lipschitz),
        "scenario": scenario_to_dict(scenario),
    }
    (out / "tau_study.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    for tau, dist in zip(report.taus[:-1], report.sup_distances):
        print(f"tau {_fmt(tau)} -> next: sup distance {_fmt(dist)}")
    for tau, dsum in zip(report.taus, report.dissipation_sums):
        print(f"tau {_fmt(tau)}: dissipation sum {_fmt(dsum)}")
    return 0


def cmd_presets(args):
    if args.action == "list":
        for name in sorted(builtin_presets()):
            print(name)
        return 0
    scenario = get_preset(args.name)
    text = write_scenario(scenario)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="atomfrac",
        description="Quasi-static crack evolution in lattices with damageable bonds")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write CSV/JSON outputs")
    p_run.add_argument("scenario", help="path to a scenario JSON file")
    p_run.add_argument("--out", default="out", help="output directory (default: out)")
    p_run.set_defaults(func=cmd_run)

    p_tau = sub.add_parser("tau-study",
                           help="run a scenario at several step sizes and compare")
    p_tau.add_argument("scenario", help="path to a scenario JSON file")
    p_tau.add_argument("--taus", required=True,
                       help="comma-separated step sizes, at least 3")
    p_tau.add_argument("--out", default="out", help="output directory (default: out)")
    p_tau.set_defaults(func=cmd_tau_study)

    p_pre = sub.add_parser("presets", help="list or emit built-in scenarios")
    pre_sub = p_pre.add_subparsers(dest="action", required=True)
    p_list = pre_sub.add_parser("list", help="print preset names")
    p_list.set_defaults(func=cmd_presets)
    p_emit = pre_sub.add_parser("emit", help="print or write a preset scenario")
    p_emit.add_argument("name")
    p_emit.add_argument("--out", default=None, help="write to a file instead of stdout")
    p_emit.set_defaults(func=cmd_presets)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
