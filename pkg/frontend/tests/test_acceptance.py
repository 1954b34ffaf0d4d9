"""Regenerate the reference figure styles from real simulator outputs.

These tests drive the simulator's CLI as a subprocess and are skipped
when it is not installed; everything else in this suite runs without it.
"""

import json
import shutil
import subprocess

import pytest

from plotview.figspec import figure_spec_from_dict
from plotview.render import render
from plotview.schema import read_bonds

ATOMFRAC = shutil.which("atomfrac")

pytestmark = pytest.mark.skipif(ATOMFRAC is None,
                                reason="simulator CLI not installed")


def run_preset(name, workdir):
    scenario = workdir / f"{name}.json"
    subprocess.run([ATOMFRAC, "presets", "emit", name, "--out", str(scenario)],
                   check=True, capture_output=True)
    out = workdir / name
    subprocess.run([ATOMFRAC, "run", str(scenario), "--out", str(out)],
                   check=True, capture_output=True)
    return out


@pytest.fixture(scope="module")
def preset_outputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_preset(name, root)
        return cache[name]

    return get


def test_chain_panel_regenerates(preset_outputs, tmp_path):
    out_dir = preset_outputs("paper-1d-l2")
    steps = list(range(0, 61, 5))  # 13 columns across the loading cycle
    spec = figure_spec_from_dict({
        "kind": "chain_columns",
        "trajectory": str(out_dir / "trajectory.csv"),
        "bonds": str(out_dir / "bonds.csv"),
        "steps": steps,
    })
    target = tmp_path / "chain_panel.png"
    report = render(spec, str(target))
    assert target.stat().st_size > 0
    assert len(report.drawn_bonds) == 13

    # drawn exactly while undamaged: spot-check three steps against bonds.csv
    table = read_bonds(str(out_dir / "bonds.csv"))
    for step in (0, 30, 60):
        expected = tuple(r.bond for r in table.at(step) if r.damage == 0.0)
        assert report.drawn_bonds[step] == expected
    assert len(report.drawn_bonds[0]) == 12     # intact chain at the start
    assert len(report.drawn_bonds[60]) < 12     # at least one bond lost


def test_stress_strain_panel_regenerates(preset_outputs, tmp_path):
    stiff = preset_outputs("paper-stress-strain-R1.2")
    soft = preset_outputs("paper-stress-strain-R1.07")
    spec = figure_spec_from_dict({
        "kind": "stress_strain",
        "curves": [
            {"path": str(stiff / "stress_strain.csv"), "label": "onset 1.2"},
            {"path": str(soft / "stress_strain.csv"), "label": "onset 1.07"},
        ],
    })
    target = tmp_path / "stress_strain.png"
    report = render(spec, str(target))
    assert target.stat().st_size > 0
    assert report.curve_labels == ("onset 1.2", "onset 1.07")


def test_lattice_snapshot_regenerates(preset_outputs, tmp_path):
    out_dir = preset_outputs("paper-2d-diag-nu0.01")
    payload = json.loads((out_dir / "verify.json").read_text())
    assert payload["ok"] is True
    spec = figure_spec_from_dict({
        "kind": "lattice_snapshot",
        "trajectory": str(out_dir / "trajectory.csv"),
        "bonds": str(out_dir / "bonds.csv"),
        "step": 30,
    })
    target = tmp_path / "patch.png"
    report = render(spec, str(target))
    assert target.stat().st_size > 0

    table = read_bonds(str(out_dir / "bonds.csv"))
    assert report.drawn_bonds[30] == table.elastic_ids(30)
