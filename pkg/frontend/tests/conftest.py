"""Synthesized CSV fixtures matching the simulator's documented schema."""

from types import SimpleNamespace

import pytest

CHAIN_TRAJECTORY = """\
step,time,atom,x
0,0,0,0
0,0,1,1
0,0,2,2
1,0.1,0,0
1,0.1,1,1.05
1,0.1,2,2.2
2,0.2,0,0
2,0.2,1,1.1
2,0.2,2,2.6
"""

CHAIN_BONDS = """\
step,bond,atom_a,atom_b,kind,separation,max_opening,damage,branch
0,0,0,1,nearest,1,1,0,current
0,1,1,2,nearest,1,1,0,current
1,0,0,1,nearest,1.05,1.05,0,current
1,1,1,2,nearest,1.15,1.15,0,current
2,0,0,1,nearest,1.1,1.1,0,current
2,1,1,2,nearest,1.5,1.5,0.75,memory
"""

# bond 5 is a longer-range pair; bond 2 is damaged from step 1 on
LATTICE_TRAJECTORY = """\
step,time,atom,x,y
0,0,0,0,0
0,0,1,1,0
0,0,2,0.5,0.866
0,0,3,1.5,0.866
1,0.1,0,0,0
1,0.1,1,1.1,0
1,0.1,2,0.5,0.9
1,0.1,3,1.7,0.95
"""

LATTICE_BONDS = """\
step,bond,atom_a,atom_b,kind,separation,max_opening,damage,branch
0,0,0,1,nearest,1,1,0,current
0,1,0,2,nearest,1,1,0,current
0,2,1,2,nearest,1,1,0,current
0,3,1,3,nearest,1,1,0,current
0,4,2,3,nearest,1,1,0,current
0,5,0,3,next_nearest,1.732,1.732,0,current
1,0,0,1,nearest,1.1,1.1,0,current
1,1,0,2,nearest,1.03,1.03,0,current
1,2,1,2,nearest,1.08,1.6,1,memory
1,3,1,3,nearest,1.12,1.12,0,current
1,4,2,3,nearest,1.2,1.2,0,current
1,5,0,3,next_nearest,1.95,1.95,0.4,memory
"""


def write_curve(path, scale=1.0):
    rows = ["step,time,strain,stress"]
    for k in range(6):
        strain = 0.01 * k
        stress = scale * (0.5 * strain if k < 4 else 0.001)
        rows.append(f"{k},{0.1 * k},{strain},{stress}")
    path.write_text("\n".join(rows) + "\n")
    return str(path)


@pytest.fixture
def chain_csvs(tmp_path):
    traj = tmp_path / "trajectory.csv"
    bonds = tmp_path / "bonds.csv"
    traj.write_text(CHAIN_TRAJECTORY)
    bonds.write_text(CHAIN_BONDS)
    return SimpleNamespace(trajectory=str(traj), bonds=str(bonds),
                           dir=tmp_path)


@pytest.fixture
def lattice_csvs(tmp_path):
    traj = tmp_path / "trajectory2d.csv"
    bonds = tmp_path / "bonds2d.csv"
    traj.write_text(LATTICE_TRAJECTORY)
    bonds.write_text(LATTICE_BONDS)
    return SimpleNamespace(trajectory=str(traj), bonds=str(bonds),
                           dir=tmp_path)


@pytest.fixture
def curve_factory(tmp_path):
    def make(name, scale=1.0):
        return write_curve(tmp_path / name, scale)
    return make
