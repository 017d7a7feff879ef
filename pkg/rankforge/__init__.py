"""
rankforge - rank tests for estimated matrices

Statistics Λ1/Λ2/Λ3, their weighted chi-squared limits, the constrained (CS)
bootstrap, and a sliced-inverse-regression application with a Monte Carlo harness.
"""
from rankforge.exceptions import RankForgeError

__version__ = "0.1.0"

__all__ = ["RankForgeError", "__version__"]
