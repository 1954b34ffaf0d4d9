"""Finite lattice systems: atoms, bonds, angle triples, boundary sets.

Atoms are numbered 0..N-1.  Deformations are arrays of shape (N, n) where n
is the ambient dimension (1 for chains, 2 for triangular patches).  Bonds
store each unordered pair once with endpoints ordered a < b.  Triples store
each unordered angle pair once: (outer1, center, outer2) with both arms of
reference length equal to the lattice spacing and outer1 < outer2.

Dirichlet atoms keep their natural construction index; the set of pinned ids
is carried in ``LatticeSystem.dirichlet`` and echoed in CLI output metadata.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from atomfrac.errors import ConfigurationError

NEAREST = "nearest"
NEXT_NEAREST = "next_nearest"
BOND_KINDS = (NEAREST, NEXT_NEAREST)

# Lattice-coordinate offsets of the triangular lattice, squared length in
# units of spacing**2: 1 for the six nearest directions, 3 for the six
# next-nearest ones.
_NN_OFFSETS = ((1, 0), (0, 1), (1, -1))
_NNN_OFFSETS = ((1, 1), (2, -1), (1, -2))


@dataclass(frozen=True)
class Bond:
    """Unordered atom pair with a reference (rest) length.

    kind is "nearest" or "next_nearest"; rest_length is the reference
    distance between the endpoints (spacing for nearest pairs, sqrt(3) times
    spacing for next-nearest pairs on the triangular lattice).
    """

    a: int
    b: int
    kind: str
    rest_length: float

    def __post_init__(self):
        if not 0 <= self.a < self.b:
            raise ConfigurationError(
                f"bond endpoints must satisfy 0 <= a < b, got ({self.a}, {self.b})"
            )
        if self.kind not in BOND_KINDS:
            raise ConfigurationError(f"unknown bond kind {self.kind!r}")
        if not (self.rest_length > 0 and np.isfinite(self.rest_length)):
            raise ConfigurationError(f"rest_length must be positive, got {self.rest_length}")


@dataclass(frozen=True)
class Triple:
    """Angle at ``center`` spanned by arms to ``outer1`` and ``outer2``.

    Both arms are nearest-neighbor bonds of the lattice; outer1 < outer2.
    """

    outer1: int
    center: int
    outer2: int

    def __post_init__(self):
        if self.outer1 == self.outer2:
            raise ConfigurationError("triple arms must end at distinct atoms")
        if self.outer1 > self.outer2:
            raise ConfigurationError("triple outer atoms must be ordered outer1 < outer2")
        if self.center in (self.outer1, self.outer2):
            raise ConfigurationError("triple center must differ from its outer atoms")


@dataclass(frozen=True)
class LatticeSystem:
    """A finite lattice with its interaction graph and pinned atom set.

    Attributes
    ----------
    dimension : int
        Lattice/ambient dimension (1 for chains, 2 for triangular patches).
    spacing : float
        Reference nearest-neighbor distance.
    positions : ndarray, shape (N, dimension)
        Reference atom positions.
    bonds : tuple of Bond
        All pair interactions, each unordered pair once, endpoints a < b.
    triples : tuple of Triple
        All angle pairs sharing a center with both arms of length spacing.
    dirichlet : frozenset of int
        Atom ids whose positions are prescribed by the boundary schedule.
    """

    dimension: int
    spacing: float
    positions: np.ndarray = field(repr=False)
    bonds: tuple
    triples: tuple = ()
    dirichlet: frozenset = frozenset()

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != self.dimension:
            raise ConfigurationError(
                f"positions must have shape (N, {self.dimension}), got {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise ConfigurationError("positions must be finite")
        object.__setattr__(self, "positions", pos)
        n = pos.shape[0]
        for bond in self.bonds:
            if bond.b >= n:
                raise ConfigurationError(f"bond ({bond.a}, {bond.b}) references a missing atom")
        for t in self.triples:
            if max(t.outer1, t.center, t.outer2) >= n:
                raise ConfigurationError("triple references a missing atom")
        if not all(0 <= i < n for i in self.dirichlet):
            raise ConfigurationError("dirichlet ids out of range")

    @property
    def atom_count(self):
        return self.positions.shape[0]

    @property
    def free_atoms(self):
        """Sorted array of atom ids not pinned by the boundary."""
        return np.array(
            sorted(set(range(self.atom_count)) - set(self.dirichlet)), dtype=int
        )

    def free_mask(self):
        mask = np.ones(self.atom_count, dtype=bool)
        mask[list(self.dirichlet)] = False
        return mask

    def nearest_pairs(self):
        """(n_nn, 2) integer array of nearest-neighbor bond endpoints."""
        return np.array(
            [(b.a, b.b) for b in self.bonds if b.kind == NEAREST], dtype=int
        ).reshape(-1, 2)

    def triangles(self):
        """All 3-cliques of the nearest-neighbor graph, as sorted id triples.

        Used by the optional orientation guard; empty for chains.
        """
        adj = {i: set() for i in range(self.atom_count)}
        for b in self.bonds:
            if b.kind == NEAREST:
                adj[b.a].add(b.b)
                adj[b.b].add(b.a)
        out = []
        for i in range(self.atom_count):
            for j in sorted(adj[i]):
                if j <= i:
                    continue
                for k in sorted(adj[i] & adj[j]):
                    if k > j:
                        out.append((i, j, k))
        return out


def _check_spacing(spacing):
    if not (np.isfinite(spacing) and spacing > 0):
        raise ConfigurationError(f"spacing must be a positive finite number, got {spacing}")


def build_chain(count, spacing, dirichlet_spec="both_ends"):
    """Build a 1D chain of ``count`` atoms with spacing ``spacing``.

    Atoms sit at spacing, 2*spacing, ..., count*spacing on the real line.
    Bonds connect consecutive atoms (nearest kind only).  Interior atoms
    contribute one angle triple each (arms to both neighbors).

    Parameters
    ----------
    count : int
        Number of atoms, at least 2.
    spacing : float
        Reference bond length, positive.
    dirichlet_spec : str
        "both_ends" pins atoms 0 and count-1; "left_end" pins atom 0 only.
    """
    if count < 2:
        raise ConfigurationError(f"a chain needs at least 2 atoms, got {count}")
    _check_spacing(spacing)
    positions = (np.arange(1, count + 1, dtype=float) * spacing)[:, None]
    bonds = tuple(
        Bond(i, i + 1, NEAREST, float(spacing)) for i in range(count - 1)
    )
    triples = tuple(Triple(i - 1, i, i + 1) for i in range(1, count - 1))
    if dirichlet_spec == "both_ends":
        dirichlet = frozenset({0, count - 1})
    elif dirichlet_spec == "left_end":
        dirichlet = frozenset({0})
    else:
        raise ConfigurationError(
            f"dirichlet_spec must be 'both_ends' or 'left_end', got {dirichlet_spec!r}"
        )
    return LatticeSystem(
        dimension=1,
        spacing=float(spacing),
        positions=positions,
        bonds=bonds,
        triples=triples,
        dirichlet=dirichlet,
    )


def build_triangular(rows, cols, spacing, include_nnn=True,
                     dirichlet_spec="left_right_columns"):
    """Build a rows-by-cols parallelogram patch of the triangular lattice.

    Atom (i, j) for i in 0..cols-1, j in 0..rows-1 sits at
    spacing * (i + j/2, j*sqrt(3)/2); its id is j*cols + i.  Nearest
    neighbors are pairs at distance spacing.  Next-nearest neighbors are
    pairs at distance sqrt(3)*spacing that share exactly two common nearest
    neighbors (the two atoms flanking their shared edge).  Triples cover
    every unordered pair of nearest neighbors of every atom.

    Parameters
    ----------
    rows, cols : int
        Patch extent, both at least 2.
    spacing : float
        Nearest-neighbor distance, positive.
    include_nnn : bool
        Whether to build next-nearest bonds.
    dirichlet_spec : str
        "left_right_columns" pins lattice columns i = 0 and i = cols-1;
        "none" pins nothing.
    """
    if rows < 2 or cols < 2:
        raise ConfigurationError(f"patch needs rows, cols >= 2, got ({rows}, {cols})")
    _check_spacing(spacing)

    def atom_id(i, j):
        return j * cols + i

    coords = [(i, j) for j in range(rows) for i in range(cols)]
    positions = np.array(
        [(spacing * (i + 0.5 * j), spacing * (np.sqrt(3) / 2.0) * j) for i, j in coords]
    )

    in_patch = lambda i, j: 0 <= i < cols and 0 <= j < rows

    nn_pairs = set()
    for i, j in coords:
        for di, dj in _NN_OFFSETS:
            if in_patch(i + di, j + dj):
                a, b = atom_id(i, j), atom_id(i + di, j + dj)
                nn_pairs.add((min(a, b), max(a, b)))
    # the three offsets above only cover half the star; add the mirrored ones
    for i, j in coords:
        for di, dj in _NN_OFFSETS:
            if in_patch(i - di, j - dj):
                a, b = atom_id(i, j), atom_id(i - di, j - dj)
                nn_pairs.add((min(a, b), max(a, b)))

    adj = {atom_id(i, j): set() for i, j in coords}
    for a, b in nn_pairs:
        adj[a].add(b)
        adj[b].add(a)

    bonds = [Bond(a, b, NEAREST, float(spacing)) for a, b in sorted(nn_pairs)]

    if include_nnn:
        nnn_rest = float(spacing) * float(np.sqrt(3.0))
        nnn_pairs = set()
        for i, j in coords:
            for di, dj in _NNN_OFFSETS + tuple((-u, -v) for u, v in _NNN_OFFSETS):
                if in_patch(i + di, j + dj):
                    a, b = atom_id(i, j), atom_id(i + di, j + dj)
                    if len(adj[a] & adj[b]) == 2:
                        nnn_pairs.add((min(a, b), max(a, b)))
        bonds.extend(Bond(a, b, NEXT_NEAREST, nnn_rest) for a, b in sorted(nnn_pairs))

    triples = []
    for c in sorted(adj):
        for u, v in itertools.combinations(sorted(adj[c]), 2):
            triples.append(Triple(u, c, v))

    if dirichlet_spec == "left_right_columns":
        dirichlet = frozenset(
            atom_id(i, j) for i, j in coords if i == 0 or i == cols - 1
        )
    elif dirichlet_spec == "none":
        dirichlet = frozenset()
    else:
        raise ConfigurationError(
            f"dirichlet_spec must be 'left_right_columns' or 'none', got {dirichlet_spec!r}"
        )

    return LatticeSystem(
        dimension=2,
        spacing=float(spacing),
        positions=positions,
        bonds=tuple(bonds),
        triples=tuple(triples),
        dirichlet=dirichlet,
    )
