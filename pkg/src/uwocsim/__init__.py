"""Simulation workbench for MIMO underwater wireless optical links.

Monte Carlo channel generation, lognormal turbulence, and three BER engines
(closed-form analytic, photon counting, bit-level simulation).
"""

from .errors import UwocError

__version__ = "0.1.0"
__all__ = ["UwocError", "__version__"]
