"""Numerical searches for counterexamples to quasiconvexity of planar isotropic energies."""
from .energy import (INF, Energy, MagicFamily, parse_energy, registry_energies,
                     singular_values, w_c, w_magic_plus)

__all__ = ["INF", "Energy", "MagicFamily", "parse_energy", "registry_energies",
           "singular_values", "w_c", "w_magic_plus"]
__version__ = "0.1.0"
