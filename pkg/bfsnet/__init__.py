"""
bfsnet - Brillouin frequency shift retrieval.
Feedforward network and Lorentzian fitting, with the resampling, simulation
and benchmark tools around them.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
