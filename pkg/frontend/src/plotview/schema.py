"""Readers for the simulator's CSV outputs.

The three files are plain comma-separated text with a header row:

    trajectory.csv     step,time,atom,x[,y]
    bonds.csv          step,bond,atom_a,atom_b,kind,separation,max_opening,
                       damage,branch
    stress_strain.csv  step,time,strain,stress

Readers are strict: a missing required column raises SchemaError naming
the column, and malformed cells raise SchemaError naming the row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SchemaError(Exception):
    """An input CSV does not match the documented schema."""


def _open_rows(path, required):
    label = Path(path).name
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from None
    reader = csv.DictReader(text.splitlines())
    header = reader.fieldnames or []
    for col in required:
        if col not in header:
            raise SchemaError(f"{label}: missing column {col}")
    return label, header, list(reader)


def _cell(label, row_no, row, col, parse):
    raw = row.get(col)
    if raw is None or raw == "":
        raise SchemaError(f"{label}: row {row_no} has no value for {col}")
    try:
        return parse(raw)
    except ValueError:
        raise SchemaError(
            f"{label}: row {row_no} column {col}: cannot parse {raw!r}"
        ) from None


@dataclass(frozen=True)
class Trajectory:
    dimension: int
    steps: tuple
    times: dict
    positions: dict  # step -> (N, dimension) array ordered by atom id

    def require_step(self, step):
        if step not in self.positions:
            raise SchemaError(
                f"step {step} is not in the trajectory "
                f"(has steps {self.steps[0]}..{self.steps[-1]})"
            )
        return self.positions[step]


def read_trajectory(path):
    label, header, rows = _open_rows(path, ("step", "time", "atom", "x"))
    dimension = 2 if "y" in header else 1
    coords = ("x", "y")[:dimension]

    by_step = {}
    times = {}
    for i, row in enumerate(rows, start=2):
        step = _cell(label, i, row, "step", int)
        atom = _cell(label, i, row, "atom", int)
        times[step] = _cell(label, i, row, "time", float)
        point = [_cell(label, i, row, c, float) for c in coords]
        by_step.setdefault(step, {})[atom] = point

    if not by_step:
        raise SchemaError(f"{label}: no data rows")
    positions = {}
    for step, atoms in by_step.items():
        ids = sorted(atoms)
        if ids != list(range(len(ids))):
            raise SchemaError(f"{label}: step {step} does not cover atoms 0..N-1")
        positions[step] = np.array([atoms[a] for a in ids])
    counts = {p.shape[0] for p in positions.values()}
    if len(counts) != 1:
        raise SchemaError(f"{label}: steps disagree on the number of atoms")
    return Trajectory(dimension=dimension, steps=tuple(sorted(positions)),
                      times=times, positions=positions)


@dataclass(frozen=True)
class BondRow:
    bond: int
    atom_a: int
    atom_b: int
    kind: str
    separation: float
    max_opening: float
    damage: float
    branch: str


@dataclass(frozen=True)
class BondTable:
    steps: tuple
    rows: dict  # step -> tuple of BondRow

    def at(self, step):
        if step not in self.rows:
            raise SchemaError(
                f"step {step} is not in the bond table "
                f"(has steps {self.steps[0]}..{self.steps[-1]})"
            )
        return self.rows[step]

    def elastic_ids(self, step):
        """Bond ids with zero damage at a step: exactly the drawable set."""
        return tuple(r.bond for r in self.at(step) if r.damage == 0.0)


_BOND_COLUMNS = ("step", "bond", "atom_a", "atom_b", "kind", "separation",
                 "max_opening", "damage", "branch")


def read_bonds(path):
    label, _, rows = _open_rows(path, _BOND_COLUMNS)
    by_step = {}
    for i, row in enumerate(rows, start=2):
        step = _cell(label, i, row, "step", int)
        by_step.setdefault(step, []).append(BondRow(
            bond=_cell(label, i, row, "bond", int),
            atom_a=_cell(label, i, row, "atom_a", int),
            atom_b=_cell(label, i, row, "atom_b", int),
            kind=_cell(label, i, row, "kind", str),
            separation=_cell(label, i, row, "separation", float),
            max_opening=_cell(label, i, row, "max_opening", float),
            damage=_cell(label, i, row, "damage", float),
            branch=_cell(label, i, row, "branch", str),
        ))
    if not by_step:
        raise SchemaError(f"{label}: no data rows")
    return BondTable(steps=tuple(sorted(by_step)),
                     rows={k: tuple(v) for k, v in by_step.items()})


@dataclass(frozen=True)
class StressStrainData:
    steps: np.ndarray
    times: np.ndarray
    strain: np.ndarray
    stress: np.ndarray


def read_stress_strain(path):
    label, _, rows = _open_rows(path, ("step", "time", "strain", "stress"))
    if not rows:
        raise SchemaError(f"{label}: no data rows")
    steps, times, strain, stress = [], [], [], []
    for i, row in enumerate(rows, start=2):
        steps.append(_cell(label, i, row, "step", int))
        times.append(_cell(label, i, row, "time", float))
        strain.append(_cell(label, i, row, "strain", float))
        stress.append(_cell(label, i, row, "stress", float))
    return StressStrainData(steps=np.array(steps), times=np.array(times),
                            strain=np.array(strain), stress=np.array(stress))
