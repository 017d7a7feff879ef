"""
Pydantic schemas for serialized results and campaign configuration
"""
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from rankforge import settings
from rankforge.constants import DEFAULT_ALPHA, DEFAULT_H, DEFAULT_P, DEFAULT_WEIGHT_LAW
from rankforge.sir import MODEL_IDS, SLICING_MODES, WEIGHT_LAWS

# Campaign columns in table order; the position doubles as the column's stream code
COLUMNS = (
    "wood",
    "rescaled",
    "adjusted",
    "mc",
    "cb_lambda1",
    "lambda2",
    "cb_lambda2",
    "lambda3",
    "cb_lambda3",
)


class StatisticReport(BaseModel):
    """Statistic value and its by-products"""
    kind: str
    value: float
    m: int
    df: Optional[int] = None
    effective_rank: Optional[int] = None
    weights: Optional[List[float]] = None
    constrained_matrix: List[List[float]]


class ReplicateSummary(BaseModel):
    """Bootstrap replicate counts and spread"""
    model_config = ConfigDict(from_attributes=True)

    count: int
    failures: int
    minimum: float
    median: float
    maximum: float


class RankTestReport(BaseModel):
    """Every field of a rank test result, ready for JSON"""
    kind: str
    m: int
    method: str
    variant: Optional[str] = None
    alpha: float
    replicates: int
    seed: int
    tie_policy: str
    statistic: StatisticReport
    quantile: float
    p_value: Optional[float] = None
    reject: bool
    replicate_summary: Optional[ReplicateSummary] = None
    replicate_values: Optional[List[float]] = None
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


class RankEstimateReport(BaseModel):
    d_hat: int
    full_rank: bool
    trail: List[RankTestReport]


class CampaignConfig(BaseModel):
    """Experimental grid of a Monte Carlo level/power campaign"""
    model: str = Field("I", description="Simulation model id")
    n_values: List[int] = Field(default_factory=lambda: [100], min_length=1, description="Sample sizes")
    p: int = Field(DEFAULT_P, ge=1)
    h: int = Field(DEFAULT_H, ge=2, description="Number of slices")
    reps: int = Field(..., ge=1, description="Monte Carlo replications per sample size")
    boot_b: int = Field(..., ge=1, description="Bootstrap replicates B")
    alpha: float = Field(DEFAULT_ALPHA, gt=0.0, lt=1.0)
    ranks_to_test: List[int] = Field(default_factory=lambda: [0, 1], min_length=1)
    columns: List[str] = Field(default_factory=lambda: list(COLUMNS), min_length=1)
    master_seed: int = 0
    parallelism: int = Field(1, ge=1)
    weight_law: str = DEFAULT_WEIGHT_LAW
    slicing: str = "count"
    mc_draws: int = Field(settings.MC_DRAWS, ge=1)

    @field_validator("model")
    @classmethod
    def _known_model(cls, v: str) -> str:
        if v not in MODEL_IDS:
            raise ValueError(f"model must be one of {MODEL_IDS}")
        return v

    @field_validator("columns")
    @classmethod
    def _known_columns(cls, v: List[str]) -> List[str]:
        unknown = [c for c in v if c not in COLUMNS]
        if unknown:
            raise ValueError(f"unknown columns {unknown}; choose from {COLUMNS}")
        if len(set(v)) != len(v):
            raise ValueError("columns must be unique")
        return v

    @field_validator("weight_law")
    @classmethod
    def _known_law(cls, v: str) -> str:
        if v not in WEIGHT_LAWS:
            raise ValueError(f"weight_law must be one of {WEIGHT_LAWS}")
        return v

    @field_validator("slicing")
    @classmethod
    def _known_slicing(cls, v: str) -> str:
        if v not in SLICING_MODES:
            raise ValueError(f"slicing must be one of {SLICING_MODES}")
        return v

    @model_validator(mode="after")
    def _ranks_fit(self) -> "CampaignConfig":
        # contrast coordinates leave H - 1 columns
        bound = min(self.p, self.h - 1)
        bad = [m for m in self.ranks_to_test if not 0 <= m < bound]
        if bad:
            raise ValueError(f"ranks {bad} outside [0, {bound - 1}]")
        if len(set(self.ranks_to_test)) != len(self.ranks_to_test):
            raise ValueError("ranks_to_test must be unique")
        if len(set(self.n_values)) != len(self.n_values) or min(self.n_values) < self.h:
            raise ValueError("sample sizes must be unique and at least H")
        return self


class CampaignMetadata(BaseModel):
    """JSON sidecar written next to a campaign table"""
    config: CampaignConfig
    failures: Dict[str, int] = Field(default_factory=dict, description="'n=..,m=..,column' -> failed replications")
    successes: Dict[str, int] = Field(default_factory=dict)
    wall_time_seconds: float
    package_version: str


def _floats(a) -> List[float]:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def rank_test_report(result) -> RankTestReport:
    """Convert a RankTestResult into its JSON schema."""
    spec = result.spec
    stat = result.statistic
    return RankTestReport(
        kind=spec.kind.value,
        m=spec.m,
        method=spec.method.value,
        variant=spec.effective_variant.value if spec.effective_variant else None,
        alpha=spec.alpha,
        replicates=spec.replicates,
        seed=spec.seed,
        tie_policy=spec.tie_policy.value,
        statistic=StatisticReport(
            kind=stat.kind.value,
            value=stat.value,
            m=stat.m,
            df=stat.df,
            effective_rank=stat.effective_rank,
            weights=_floats(stat.weights) if stat.weights is not None else None,
            constrained_matrix=np.asarray(stat.constrained_matrix, dtype=float).tolist(),
        ),
        quantile=result.quantile,
        p_value=result.p_value,
        reject=result.reject,
        replicate_summary=(
            ReplicateSummary.model_validate(result.replicate_summary)
            if result.replicate_summary is not None else None
        ),
        replicate_values=_floats(result.replicate_values) if result.replicate_values is not None else None,
        diagnostics=dict(result.diagnostics),
    )


def rank_estimate_report(estimate) -> RankEstimateReport:
    return RankEstimateReport(
        d_hat=estimate.d_hat,
        full_rank=estimate.full_rank,
        trail=[rank_test_report(r) for r in estimate.trail],
    )
