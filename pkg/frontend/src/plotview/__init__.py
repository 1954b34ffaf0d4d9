"""Figure regeneration for lattice fracture CSV outputs."""

__version__ = "0.1.0"
