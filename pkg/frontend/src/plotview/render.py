"""Turn a figure spec plus CSV data into an image file.

Rendering never writes to its inputs, and identical inputs with identical
styling produce byte-identical image files (timestamps and host-specific
metadata are pinned).  Every bond with zero damage at the drawn step is
rendered; every damaged bond is omitted, which makes cracks appear as
missing segments.  The returned report lists the drawn bond ids per step
so the choice can be audited against bonds.csv.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "plotview"

import matplotlib.pyplot as plt
from matplotlib.collections import LineCollection

from plotview.figspec import (
    CHAIN_COLUMNS,
    LATTICE_SNAPSHOT,
    FigureSpecError,
)
from plotview.schema import read_bonds, read_stress_strain, read_trajectory


@dataclass(frozen=True)
class RenderReport:
    kind: str
    out_path: str
    drawn_bonds: dict       # step -> tuple of rendered bond ids
    curve_labels: tuple = ()


def _save(fig, out_path, dpi):
    path = Path(out_path)
    kwargs = {"dpi": dpi}
    suffix = path.suffix.lower()
    if suffix == ".png":
        kwargs["metadata"] = {"Software": "plotview"}
    elif suffix == ".svg":
        kwargs["metadata"] = {"Date": None}
    elif suffix == ".pdf":
        kwargs["metadata"] = {"CreationDate": None}
    fig.savefig(path, **kwargs)


def _check_step(step, table, what):
    if step not in table:
        known = sorted(table)
        raise FigureSpecError(
            f"step {step} is not in the {what} (has steps "
            f"{known[0]}..{known[-1]})"
        )


def _render_chain_columns(spec, out_path):
    traj = read_trajectory(spec.trajectory)
    if traj.dimension != 1:
        raise FigureSpecError("chain_columns needs a one-dimensional trajectory")
    bonds = read_bonds(spec.bonds)
    steps = spec.steps if spec.steps is not None else traj.steps
    for step in steps:
        _check_step(step, traj.positions, "trajectory")
        _check_step(step, bonds.rows, "bond table")

    style = spec.style
    fig, ax = plt.subplots(figsize=style["figsize"])
    drawn = {}
    segments = []
    for column, step in enumerate(steps):
        x0 = column * style["column_gap"]
        pos = traj.positions[step][:, 0]
        ax.scatter([x0] * len(pos), pos, s=style["atom_size"],
                   color=style["atom_color"], zorder=3)
        ids = []
        for row in bonds.rows[step]:
            if row.damage == 0.0:
                segments.append([(x0, pos[row.atom_a]), (x0, pos[row.atom_b])])
                ids.append(row.bond)
        drawn[step] = tuple(ids)
    ax.add_collection(LineCollection(segments, colors=style["elastic_color"],
                                     linewidths=style["line_width"], zorder=2))
    ax.set_xticks([c * style["column_gap"] for c in range(len(steps))])
    ax.set_xticklabels([str(s) for s in steps])
    ax.set_xlabel("step")
    ax.set_ylabel("position")
    if style["title"]:
        ax.set_title(style["title"])
    fig.tight_layout()
    _save(fig, out_path, style["dpi"])
    plt.close(fig)
    return RenderReport(kind=spec.kind, out_path=str(out_path), drawn_bonds=drawn)


def _render_lattice_snapshot(spec, out_path):
    traj = read_trajectory(spec.trajectory)
    if traj.dimension != 2:
        raise FigureSpecError("lattice_snapshot needs a two-dimensional trajectory")
    bonds = read_bonds(spec.bonds)
    _check_step(spec.step, traj.positions, "trajectory")
    _check_step(spec.step, bonds.rows, "bond table")

    style = spec.style
    pos = traj.positions[spec.step]
    fig, ax = plt.subplots(figsize=style["figsize"])
    near, far, ids = [], [], []
    for row in bonds.rows[spec.step]:
        if row.damage != 0.0:
            continue
        seg = [tuple(pos[row.atom_a]), tuple(pos[row.atom_b])]
        (near if row.kind == "nearest" else far).append(seg)
        ids.append(row.bond)
    ax.add_collection(LineCollection(far, colors=style["elastic_color"],
                                     linewidths=0.7 * style["line_width"],
                                     alpha=style["nnn_alpha"], zorder=1))
    ax.add_collection(LineCollection(near, colors=style["elastic_color"],
                                     linewidths=style["line_width"], zorder=2))
    ax.scatter(pos[:, 0], pos[:, 1], s=style["atom_size"],
               color=style["atom_color"], zorder=3)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    title = style["title"] or f"step {spec.step}"
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, out_path, style["dpi"])
    plt.close(fig)
    return RenderReport(kind=spec.kind, out_path=str(out_path),
                        drawn_bonds={spec.step: tuple(ids)})


def _render_stress_strain(spec, out_path):
    style = spec.style
    fig, ax = plt.subplots(figsize=style["figsize"])
    labels = []
    for path, label in spec.curves:
        data = read_stress_strain(path)
        ax.plot(data.strain, data.stress, linewidth=style["line_width"],
                label=label)
        labels.append(label)
    ax.set_xlabel("strain")
    ax.set_ylabel("stress")
    if style["title"]:
        ax.set_title(style["title"])
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path, style["dpi"])
    plt.close(fig)
    return RenderReport(kind=spec.kind, out_path=str(out_path),
                        drawn_bonds={}, curve_labels=tuple(labels))


def render(spec, out_path):
    """Render a figure spec to out_path; returns what was drawn."""
    if spec.kind == CHAIN_COLUMNS:
        return _render_chain_columns(spec, out_path)
    if spec.kind == LATTICE_SNAPSHOT:
        return _render_lattice_snapshot(spec, out_path)
    return _render_stress_strain(spec, out_path)
