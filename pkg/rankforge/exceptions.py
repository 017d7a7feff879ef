"""
Error taxonomy

Every failure raised by the package derives from RankForgeError. Numerical
failures that a bootstrap replicate or campaign replication may absorb are
collected in NUMERICAL_ERRORS.
"""
from typing import Optional, Tuple

import numpy as np


class RankForgeError(Exception):
    """Base class for all package errors"""


class InvalidInput(RankForgeError, ValueError):
    """Input violates a documented precondition"""


class DegenerateSpectrum(RankForgeError):
    """Singular values at the split are tied, so the projectors are not unique"""

    def __init__(self, upper: float, lower: float, m: Optional[int] = None):
        self.upper = float(upper)
        self.lower = float(lower)
        self.m = m
        where = f" at m={m}" if m is not None else ""
        super().__init__(f"tied singular values{where}: {self.upper!r} vs {self.lower!r}")


class SingularGamma(RankForgeError):
    """Covariance estimate is too ill-conditioned to invert"""

    def __init__(self, condition: float):
        self.condition = float(condition)
        super().__init__(f"gamma_hat condition number {self.condition:.3g} exceeds the allowed ceiling")


class OptimizerDidNotConverge(RankForgeError):
    """Alternating least squares exhausted its iteration budget"""

    def __init__(self, gradient_norm: float, iterations: int, relative_decrease: float):
        self.gradient_norm = float(gradient_norm)
        self.iterations = int(iterations)
        self.relative_decrease = float(relative_decrease)
        super().__init__(
            f"no convergence after {self.iterations} iterations "
            f"(relative decrease {self.relative_decrease:.3g}, gradient norm {self.gradient_norm:.3g})"
        )


class NumericalBreakdown(RankForgeError):
    """A computation produced non-finite values"""


class NonsingularityViolated(RankForgeError):
    """Constraint Jacobian is rank deficient at the evaluation point"""


class BootstrapUnstable(RankForgeError):
    """Too many bootstrap replicates failed"""

    def __init__(self, failures: int, replicates: int):
        self.failures = int(failures)
        self.replicates = int(replicates)
        super().__init__(f"{self.failures} of {self.replicates} bootstrap replicates failed")


class DegenerateSlicing(RankForgeError):
    """Responses do not support the requested number of slices"""


class CampaignFailure(RankForgeError):
    """A campaign cell lost too many replications to numerical failures"""

    def __init__(self, cell: Tuple, failures: int, reps: int):
        self.cell = cell
        self.failures = int(failures)
        self.reps = int(reps)
        super().__init__(f"cell {cell}: {self.failures} of {self.reps} replications failed")


NUMERICAL_ERRORS = (
    DegenerateSpectrum,
    SingularGamma,
    OptimizerDidNotConverge,
    NumericalBreakdown,
    np.linalg.LinAlgError,
)
