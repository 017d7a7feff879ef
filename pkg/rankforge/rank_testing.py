"""
Rank tests and sequential rank estimation

H₀: rank(M) = m against H₁: rank(M) > m, decided either against the
statistic's limit law or against CS bootstrap replicates built around the
statistic's own constrained matrix.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from rankforge import asymptotics, settings
from rankforge.asymptotics import QuantileMethod, WeightedChiSq
from rankforge.constants import DEFAULT_ALPHA, DEFAULT_BOOTSTRAP_REPLICATES, TIE_PERTURBATION
from rankforge.core_linalg import (
    EstimatedMatrix,
    inverse_sqrt_factor,
    projectors,
    pseudo_inverse,
    sandwich,
    svd_split,
    symmetric_sqrt,
    unvec,
    vec,
)
from rankforge.exceptions import DegenerateSpectrum, InvalidInput
from rankforge.lsce import (
    CsBootstrapConfig,
    CsBootstrapOutcome,
    FixedRankManifold,
    ReplicateDraw,
    Sampler,
    cs_bootstrap_from_fit,
)
from rankforge.min_discrepancy import OptimizerConfig
from rankforge.random_streams import MASK64, derive_rng
from rankforge.statistics import StatKind, StatValue, compute

logger = logging.getLogger(__name__)

# stream key for the tie-breaking perturbation
_PERTURB_STREAM = 0x7E1E


class TestMethod(str, Enum):
    __test__ = False
    ASYMPTOTIC = "asymptotic"
    BOOTSTRAP = "bootstrap"


class Lambda1Variant(str, Enum):
    WOOD = "wood"
    ADJUSTED = "adjusted"
    RESCALED = "rescaled"
    MONTE_CARLO_WEIGHTS = "mc"

    @property
    def quantile_method(self) -> QuantileMethod:
        return {
            Lambda1Variant.WOOD: QuantileMethod.WOOD,
            Lambda1Variant.ADJUSTED: QuantileMethod.ADJUSTED,
            Lambda1Variant.RESCALED: QuantileMethod.RESCALED,
            Lambda1Variant.MONTE_CARLO_WEIGHTS: QuantileMethod.MONTE_CARLO,
        }[self]


class TiePolicy(str, Enum):
    ERROR = "error"
    PERTURB = "perturb"


@dataclass(frozen=True)
class RankTestSpec:
    """
    One rank test

    Args:
        kind: Statistic
        m: Tested rank
        method: Asymptotic limit law or CS bootstrap
        variant: Weighted chi-squared approximation (Lambda1 asymptotic only, default Wood)
        alpha: Test size
        replicates: Bootstrap replicates B
        seed: Seeds the bootstrap streams, Monte Carlo quantiles and tie perturbation
        optimizer: Settings for the weighted fixed-rank projection
        tie_policy: What to do when singular values at the split are tied
        workers: Threads for bootstrap replicates
        mc_draws: Draws for Monte Carlo weighted chi-squared quantiles
    """
    kind: StatKind
    m: int
    method: TestMethod = TestMethod.ASYMPTOTIC
    variant: Optional[Lambda1Variant] = None
    alpha: float = DEFAULT_ALPHA
    replicates: int = DEFAULT_BOOTSTRAP_REPLICATES
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    tie_policy: TiePolicy = TiePolicy.ERROR
    workers: int = 1
    mc_draws: int = settings.MC_DRAWS

    def __post_init__(self):
        object.__setattr__(self, "kind", StatKind(self.kind))
        object.__setattr__(self, "method", TestMethod(self.method))
        object.__setattr__(self, "tie_policy", TiePolicy(self.tie_policy))
        if self.variant is not None:
            if self.kind is not StatKind.LAMBDA1:
                raise InvalidInput("a weighted chi-squared variant only applies to lambda1")
            object.__setattr__(self, "variant", Lambda1Variant(self.variant))
        if self.m < 0:
            raise InvalidInput(f"tested rank must be nonnegative, got {self.m}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.replicates < 1:
            raise InvalidInput("replicates must be at least 1")

    @property
    def effective_variant(self) -> Optional[Lambda1Variant]:
        if self.kind is not StatKind.LAMBDA1 or self.method is not TestMethod.ASYMPTOTIC:
            return None
        return self.variant or Lambda1Variant.WOOD

    def with_rank(self, m: int) -> "RankTestSpec":
        return replace(self, m=m)


@dataclass(frozen=True)
class ReplicateStats:
    count: int
    failures: int
    minimum: float
    median: float
    maximum: float


@dataclass(frozen=True)
class RankTestResult:
    """
    Outcome of one rank test

    reject is True exactly when statistic.value > quantile.
    """
    spec: RankTestSpec
    statistic: StatValue
    quantile: float
    reject: bool
    p_value: Optional[float] = None
    replicate_summary: Optional[ReplicateStats] = None
    replicate_values: Optional[np.ndarray] = field(default=None, repr=False)
    diagnostics: Dict[str, Union[float, int, str, bool, None]] = field(default_factory=dict)


@dataclass(frozen=True)
class RankEstimate:
    d_hat: int
    full_rank: bool
    trail: List[RankTestResult]


GammaStarRule = Callable[[ReplicateDraw], Optional[np.ndarray]]


def gaussian_sampler(est: EstimatedMatrix) -> Sampler:
    """W* ~ N(0, Γ̂) reshaped to p×H; used when no data-level sampler is supplied."""
    root = symmetric_sqrt(est.gamma_hat)
    p, h = est.p, est.h

    def draw(rng: np.random.Generator) -> ReplicateDraw:
        return ReplicateDraw(unvec(root @ rng.standard_normal(p * h), p, h))

    return draw


def _metric_rule(kind: StatKind, est: EstimatedMatrix, m: int, gamma_star_rule: Optional[GammaStarRule]):
    if kind is StatKind.LAMBDA1:
        return None

    def gamma_star(draw: ReplicateDraw) -> np.ndarray:
        g = gamma_star_rule(draw) if gamma_star_rule is not None else draw.gamma_star
        return est.gamma_hat if g is None else g

    if kind is StatKind.LAMBDA2:
        def rule(theta0, draw):
            proj = projectors(svd_split(unvec(theta0, est.p, est.h), m))
            return None, pseudo_inverse(sandwich(proj, gamma_star(draw)))[0]
        return rule

    def rule(theta0, draw):
        g = inverse_sqrt_factor(gamma_star(draw))
        weight = g.T @ g
        return weight, weight
    return rule


def _asymptotic(est: EstimatedMatrix, spec: RankTestSpec, stat: StatValue) -> RankTestResult:
    level = 1.0 - spec.alpha
    diagnostics: Dict[str, Union[float, int, str, bool, None]] = {"hypothesised_rank": spec.m}
    if stat.kind is StatKind.LAMBDA1:
        variant = spec.effective_variant
        law = WeightedChiSq(
            tuple(stat.weights), variant.quantile_method, draws=spec.mc_draws, seed=spec.seed & MASK64
        )
        estimate = asymptotics.evaluate(law, level)
        q = estimate.value
        diagnostics.update(
            quantile_method=estimate.used.value,
            wood_fallback=estimate.fallback,
            asymptotic_p_value=asymptotics.tail_probability(law, stat.value),
            positive_weights=int(law.positive_weights.size),
        )
    else:
        df = stat.df
        q = asymptotics.chi2_quantile(df, level) if df >= 1 else 0.0
        diagnostics.update(
            df=df,
            asymptotic_p_value=asymptotics.chi2_tail(df, stat.value) if df >= 1 else float(stat.value <= 0),
        )
        if stat.effective_rank is not None:
            diagnostics["effective_rank"] = stat.effective_rank
    return RankTestResult(spec, stat, q, bool(stat.value > q), diagnostics=diagnostics)


def _bootstrap(
    est: EstimatedMatrix,
    spec: RankTestSpec,
    stat: StatValue,
    w_star_sampler: Optional[Sampler],
    gamma_star_rule: Optional[GammaStarRule],
) -> RankTestResult:
    # replicates are centred at the statistic's own constrained matrix:
    # P̂₁M̂P̂₂ for lambda1/lambda2, the weighted projection for lambda3
    manifold = FixedRankManifold(est.p, est.h, spec.m, spec.optimizer)
    cfg = CsBootstrapConfig(
        replicates=spec.replicates,
        alpha=spec.alpha,
        seed=spec.seed,
        w_star_sampler=w_star_sampler or gaussian_sampler(est),
        metric_rule=_metric_rule(stat.kind, est, spec.m, gamma_star_rule),
        workers=spec.workers,
    )
    outcome: CsBootstrapOutcome = cs_bootstrap_from_fit(
        vec(stat.constrained_matrix), stat.value, manifold, est.n, cfg
    )
    values = outcome.replicate_values
    summary = ReplicateStats(
        count=int(values.size),
        failures=outcome.failures,
        minimum=float(values.min()),
        median=float(np.median(values)),
        maximum=float(values.max()),
    )
    diagnostics = {"hypothesised_rank": spec.m, "df": stat.df, "effective_rank": stat.effective_rank}
    return RankTestResult(
        spec,
        stat,
        outcome.quantile,
        outcome.reject,
        p_value=outcome.p_value,
        replicate_summary=summary,
        replicate_values=values,
        diagnostics=diagnostics,
    )


def _run_once(est, spec, w_star_sampler, gamma_star_rule) -> RankTestResult:
    stat = compute(spec.kind, est, spec.m, spec.optimizer)
    if spec.method is TestMethod.ASYMPTOTIC:
        return _asymptotic(est, spec, stat)
    return _bootstrap(est, spec, stat, w_star_sampler, gamma_star_rule)


def perturb(est: EstimatedMatrix, seed: int) -> EstimatedMatrix:
    """Add 1e-8·λ₁ i.i.d. normal noise to M̂."""
    top = float(np.linalg.norm(est.m_hat, 2))
    scale = TIE_PERTURBATION * (top if top > 0 else 1.0)
    noise = derive_rng(seed, _PERTURB_STREAM).standard_normal(est.m_hat.shape)
    return EstimatedMatrix(est.m_hat + scale * noise, est.gamma_hat, est.n)


def run_test(
    est: EstimatedMatrix,
    spec: RankTestSpec,
    w_star_sampler: Optional[Sampler] = None,
    gamma_star_rule: Optional[GammaStarRule] = None,
) -> RankTestResult:
    """
    Test H₀: rank = spec.m

    Args:
        est: Estimated matrix and covariance
        spec: Statistic, method and settings
        w_star_sampler: Draws W* (p×H) for the bootstrap; N(0, Γ̂) when omitted
        gamma_star_rule: Γ* for a draw; defaults to the draw's own Γ*, then Γ̂

    Returns:
        RankTestResult

    Raises:
        DegenerateSpectrum: Tied singular values and tie_policy=error (or tied again after perturbing)
        SingularGamma: Lambda3 with an ill-conditioned Γ̂
        BootstrapUnstable: Too many failed replicates
    """
    if spec.m >= est.rank_bound:
        raise InvalidInput(f"tested rank m={spec.m} must be below min(p, H)={est.rank_bound}")
    try:
        return _run_once(est, spec, w_star_sampler, gamma_star_rule)
    except DegenerateSpectrum as e:
        if spec.tie_policy is not TiePolicy.PERTURB:
            raise
        logger.warning("⚠️  %s; perturbing M̂ and retrying once", e)
    result = _run_once(perturb(est, spec.seed), spec, w_star_sampler, gamma_star_rule)
    return replace(result, diagnostics={**result.diagnostics, "perturbed": True})


def estimate_rank(
    est: EstimatedMatrix,
    spec_template: RankTestSpec,
    w_star_sampler: Optional[Sampler] = None,
    gamma_star_rule: Optional[GammaStarRule] = None,
) -> RankEstimate:
    """
    Sequential rank estimate: the first m in 0, 1, ... whose test does not reject

    When every m < min(p, H) is rejected the estimate is min(p, H) with full_rank set.
    """
    trail: List[RankTestResult] = []
    for m in range(est.rank_bound):
        result = run_test(est, spec_template.with_rank(m), w_star_sampler, gamma_star_rule)
        trail.append(result)
        logger.info("📊 m=%d: statistic %.6g, quantile %.6g, reject=%s", m, result.statistic.value, result.quantile, result.reject)
        if not result.reject:
            return RankEstimate(m, False, trail)
    return RankEstimate(est.rank_bound, True, trail)
