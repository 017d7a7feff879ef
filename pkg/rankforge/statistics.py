"""
Rank test statistics

Each statistic has the form n·(M̂ - M̂_c)ᵀB̂(M̂ - M̂_c) with M̂_c the rank-m
projection of M̂ in the Â metric:

    Lambda1   Â = I,    B̂ = I
    Lambda2   Â = I,    B̂ = [(Q̂₂⊗Q̂₁)Γ̂(Q̂₂⊗Q̂₁)]⁺
    Lambda3   Â = B̂ = Γ̂⁻¹
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from rankforge import min_discrepancy
from rankforge.core_linalg import (
    EstimatedMatrix,
    inverse_sqrt_factor,
    projectors,
    pseudo_inverse,
    sandwich,
    svd_split,
    vec,
)
from rankforge.exceptions import InvalidInput
from rankforge.min_discrepancy import OptimizerConfig

logger = logging.getLogger(__name__)


class StatKind(str, Enum):
    LAMBDA1 = "lambda1"
    LAMBDA2 = "lambda2"
    LAMBDA3 = "lambda3"


@dataclass(frozen=True)
class StatValue:
    """
    Value of a statistic at a tested rank

    Args:
        kind: Which statistic
        value: n times the weighted distance to the rank-m set
        m: Tested rank
        constrained_matrix: The rank-m matrix M̂_c achieving the distance
        weights: Estimated weighted chi-squared weights (Lambda1 only)
        df: Chi-squared degrees of freedom (Lambda2, Lambda3)
        effective_rank: Rank of the sandwiched covariance (Lambda2 only)
    """
    kind: StatKind
    value: float
    m: int
    constrained_matrix: np.ndarray
    weights: Optional[np.ndarray] = None
    df: Optional[int] = None
    effective_rank: Optional[int] = None

    @property
    def aux(self) -> Union[np.ndarray, int, None]:
        return self.weights if self.kind is StatKind.LAMBDA1 else self.df


def _check_rank(est: EstimatedMatrix, m: int) -> None:
    if not 0 <= m < est.rank_bound:
        raise InvalidInput(f"tested rank m={m} outside [0, {est.rank_bound - 1}]")


def lambda1(est: EstimatedMatrix, m: int, with_weights: bool = True) -> StatValue:
    """
    n times the sum of the squared trailing singular values

    Weights are the eigenvalues of (Q̂₂⊗Q̂₁)Γ̂(Q̂₂⊗Q̂₁), descending, truncated to
    the (p-m)(H-m) that can be nonzero.
    """
    _check_rank(est, m)
    parts = svd_split(est.m_hat, m)
    value = est.n * float(np.sum(parts.trailing ** 2))
    weights = None
    if with_weights:
        sand = sandwich(projectors(parts), est.gamma_hat)
        eig = np.linalg.eigvalsh(sand)[::-1]
        weights = np.clip(eig[:(est.p - m) * (est.h - m)], 0.0, None)
    return StatValue(StatKind.LAMBDA1, value, m, parts.truncated(), weights=weights)


def lambda2(est: EstimatedMatrix, m: int) -> StatValue:
    """Wald-type statistic with the pseudo-inverse of the projected covariance."""
    _check_rank(est, m)
    parts = svd_split(est.m_hat, m)
    proj = projectors(parts)
    pinv, eff_rank = pseudo_inverse(sandwich(proj, est.gamma_hat))
    x = vec(proj.q1 @ est.m_hat @ proj.q2)
    value = max(est.n * float(x @ pinv @ x), 0.0)
    df = min(eff_rank, (est.p - m) * (est.h - m))
    return StatValue(
        StatKind.LAMBDA2, value, m, parts.truncated(), df=df, effective_rank=eff_rank
    )


def lambda3(est: EstimatedMatrix, m: int, opt: Optional[OptimizerConfig] = None) -> StatValue:
    """
    Minimum discrepancy: n·min over rank-m M of vec(M̂ - M)ᵀΓ̂⁻¹vec(M̂ - M)

    Raises:
        SingularGamma: If Γ̂ is not safely invertible
        OptimizerDidNotConverge: If the alternating scheme fails from every start
    """
    _check_rank(est, m)
    g = inverse_sqrt_factor(est.gamma_hat)
    df = (est.h - m) * (est.p - m)
    if m == 0:
        r = g @ vec(est.m_hat)
        return StatValue(StatKind.LAMBDA3, est.n * float(r @ r), 0, np.zeros_like(est.m_hat), df=df)
    point = min_discrepancy.solve(est.m_hat, g, m, opt)
    return StatValue(StatKind.LAMBDA3, est.n * point.objective, m, point.matrix, df=df)


def compute(
    kind: StatKind,
    est: EstimatedMatrix,
    m: int,
    opt: Optional[OptimizerConfig] = None,
    with_weights: bool = True,
) -> StatValue:
    """Dispatch to the statistic named by kind; with_weights only affects lambda1."""
    kind = StatKind(kind)
    if kind is StatKind.LAMBDA1:
        return lambda1(est, m, with_weights)
    if kind is StatKind.LAMBDA2:
        return lambda2(est, m)
    return lambda3(est, m, opt)
