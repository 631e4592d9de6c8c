"""Numerical toolkit for billiards with small scatterers.

Builds collision chains of a limiting billiard whose scatterer has
codimension greater than one, certifies their nondegeneracy and
hyperbolicity through the block-tridiagonal Hessian of the discrete
action, and verifies shadowing by actual trajectories: billiard orbits
in the complement of a thin tube around the scatterer, and nearly
colliding orbits of flows with Newtonian singularities.
"""

from . import billiard, bvp, dls, dynamics, kepler, scatterer, singular, symbolic

__all__ = [
    "billiard",
    "bvp",
    "dls",
    "dynamics",
    "kepler",
    "scatterer",
    "singular",
    "symbolic",
]

__version__ = "0.1.0"
