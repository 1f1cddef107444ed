"""Scalar quantizer design with chord-approximated level updates (ALM and AEQ)."""

from .approx_solver import Scheme
from .codec import decode, empirical_mse, encode
from .density import Density
from .oracle import cost, exact_envelope, exact_lloyd_max, near_optimality_gap
from .quantizer import Codebook, RunConfig, RunTrace, run

__all__ = ["Scheme", "Density", "Codebook", "RunConfig", "RunTrace", "run", "cost",
           "exact_lloyd_max", "exact_envelope", "near_optimality_gap", "encode", "decode",
           "empirical_mse"]
__version__ = "0.1.0"
