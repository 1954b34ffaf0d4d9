"""Figure descriptions: what to draw, from which files, in which style.

A figure spec is a JSON object with a ``kind`` and kind-specific keys:

    chain_columns     trajectory, bonds, optional steps (list of step ids;
                      default every step in the trajectory)
    lattice_snapshot  trajectory, bonds, step (one step id)
    stress_strain     curves: list of {path, label}

plus an optional ``style`` object.  Bonds are drawn only while their
damage is exactly zero; damaged ones are omitted.  Unknown keys anywhere
are rejected by name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

CHAIN_COLUMNS = "chain_columns"
LATTICE_SNAPSHOT = "lattice_snapshot"
STRESS_STRAIN = "stress_strain"
KINDS = (CHAIN_COLUMNS, LATTICE_SNAPSHOT, STRESS_STRAIN)

STYLE_DEFAULTS = {
    "elastic_color": "#1a9641",     # green bond segments while elastic
    "atom_color": "#1b1b1b",
    "atom_size": 14.0,
    "line_width": 1.6,
    "nnn_alpha": 0.3,               # longer-range bonds drawn fainter
    "column_gap": 1.0,              # horizontal spacing of chain columns
    "figsize": [6.4, 4.8],
    "dpi": 150,
    "title": None,
}


class FigureSpecError(Exception):
    """The figure description is malformed or inconsistent with its data."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    trajectory: str = None
    bonds: str = None
    steps: tuple = None             # chain_columns; None means every step
    step: int = None                # lattice_snapshot
    curves: tuple = ()              # stress_strain: (path, label) pairs
    style: dict = field(default_factory=dict)


def _require(data, key, kind):
    if key not in data:
        raise FigureSpecError(f"{kind} figure needs key {key!r}")
    return data[key]


def _check_keys(data, allowed):
    for key in data:
        if key not in allowed:
            raise FigureSpecError(f"unknown key {key!r}")


def _merge_style(data):
    style = data.get("style", {})
    if not isinstance(style, dict):
        raise FigureSpecError("style must be an object")
    for key in style:
        if key not in STYLE_DEFAULTS:
            raise FigureSpecError(f"unknown style key {key!r}")
    merged = dict(STYLE_DEFAULTS)
    merged.update(style)
    return merged


def figure_spec_from_dict(data):
    if not isinstance(data, dict):
        raise FigureSpecError("figure spec must be a JSON object")
    kind = data.get("kind")
    if kind not in KINDS:
        raise FigureSpecError(f"kind must be one of {KINDS}, got {kind!r}")
    style = _merge_style(data)

    if kind == CHAIN_COLUMNS:
        _check_keys(data, {"kind", "trajectory", "bonds", "steps", "style"})
        steps = data.get("steps")
        if steps is not None:
            if (not isinstance(steps, list) or not steps
                    or not all(isinstance(s, int) and not isinstance(s, bool)
                               for s in steps)):
                raise FigureSpecError("steps must be a non-empty list of integers")
            steps = tuple(steps)
        return FigureSpec(kind=kind,
                          trajectory=str(_require(data, "trajectory", kind)),
                          bonds=str(_require(data, "bonds", kind)),
                          steps=steps, style=style)

    if kind == LATTICE_SNAPSHOT:
        _check_keys(data, {"kind", "trajectory", "bonds", "step", "style"})
        step = _require(data, "step", kind)
        if isinstance(step, bool) or not isinstance(step, int):
            raise FigureSpecError("step must be an integer")
        return FigureSpec(kind=kind,
                          trajectory=str(_require(data, "trajectory", kind)),
                          bonds=str(_require(data, "bonds", kind)),
                          step=step, style=style)

    _check_keys(data, {"kind", "curves", "style"})
    raw = _require(data, "curves", kind)
    if not isinstance(raw, list) or not raw:
        raise FigureSpecError("curves must be a non-empty list")
    curves = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise FigureSpecError("each curve must be an object with a path")
        _check_keys(entry, {"path", "label"})
        if "path" not in entry:
            raise FigureSpecError("each curve must be an object with a path")
        curves.append((str(entry["path"]), str(entry.get("label", entry["path"]))))
    return FigureSpec(kind=kind, curves=tuple(curves), style=style)


def load_figure_spec(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FigureSpecError(f"cannot read figure spec {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FigureSpecError(f"figure spec is not valid JSON: {exc}") from None
    return figure_spec_from_dict(data)
