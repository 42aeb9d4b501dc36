"""Spike-layer solutions of Hamiltonian elliptic systems on conformally flat tori.

Modules
-------
entire
    Radial ground state of the whole-space limit system and its moments.
geometry
    Conformal metrics on periodic boxes, curvature and geodesic distances.
dual
    Discrete Helmholtz operator, dual functional and the Newton solver.
spike
    Continuation in eps, profile and decay diagnostics, energy expansion fits.
config, cli
    Run configuration and the command line driver.
"""

from .entire import ExponentPair, RadialGroundState, solve_entire_ground_state
from .geometry import ConformalMetric

__version__ = "0.1.0"

__all__ = ["ConformalMetric", "ExponentPair", "RadialGroundState", "solve_entire_ground_state",
           "__version__"]
