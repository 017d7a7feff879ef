"""
Least-squares constrained estimation and the CS bootstrap

An unconstrained estimate θ̂ is projected onto a constraint manifold in the
Â metric; the statistic is n(θ̂ - θ̂_c)ᵀB̂(θ̂ - θ̂_c). The CS bootstrap perturbs
the constrained estimate, θ*₀ = θ̂_c + n^{-1/2}W*, re-projects, and uses the
replicate statistics as the reference distribution.
"""
import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import optimize

from rankforge import min_discrepancy
from rankforge.constants import (
    DEFAULT_ALPHA,
    DEFAULT_BOOTSTRAP_REPLICATES,
    MAX_CONDITION,
    MAX_REPLICATE_FAILURE_RATE,
)
from rankforge.core_linalg import (
    condition_number,
    nearest_rank_frobenius,
    symmetric_sqrt,
    unvec,
    vec,
)
from rankforge.exceptions import (
    NUMERICAL_ERRORS,
    BootstrapUnstable,
    InvalidInput,
    NonsingularityViolated,
    NumericalBreakdown,
    SingularGamma,
)
from rankforge.min_discrepancy import OptimizerConfig
from rankforge.random_streams import replicate_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstraintOracle:
    """Explicit constraint function g (p -> q) and its Jacobian (q×p)"""
    g: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]


class Manifold(ABC):
    """Constraint set in R^dimension with a weighted projection"""

    dimension: int
    codimension: int

    @abstractmethod
    def project(self, theta: np.ndarray, a_weight: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Point of the manifold closest to theta in the a_weight metric

        Args:
            theta: Point of the ambient space
            a_weight: Positive definite weight matrix; None means identity
        """

    def constraint_oracle(self) -> Optional[ConstraintOracle]:
        return None


def _is_scaled_identity(a: Optional[np.ndarray]) -> bool:
    if a is None:
        return True
    return bool(np.allclose(a, a[0, 0] * np.eye(a.shape[0]), rtol=0.0, atol=1e-14 * abs(a[0, 0])))


class Sphere(Manifold):
    """Unit sphere {‖θ‖ = 1} in R^dim"""

    def __init__(self, dim: int):
        if dim < 1:
            raise InvalidInput("sphere dimension must be positive")
        self.dimension = dim
        self.codimension = 1

    def project(self, theta, a_weight=None):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if _is_scaled_identity(a_weight):
            norm = np.linalg.norm(theta)
            if norm == 0.0:
                out = np.zeros(self.dimension)
                out[0] = 1.0
                return out
            return theta / norm
        return self._weighted_projection(theta, np.asarray(a_weight, dtype=float))

    def _weighted_projection(self, theta: np.ndarray, a: np.ndarray) -> np.ndarray:
        # x(μ) = (A + μI)⁻¹Aθ with ‖x(μ)‖ = 1 and μ > -λ_min
        lam, q = np.linalg.eigh(0.5 * (a + a.T))
        c = lam * (q.T @ theta)
        lmin = lam[0]

        def excess(mu: float) -> float:
            return float(np.sum((c / (lam + mu)) ** 2) - 1.0)

        lo = -lmin + 1e-12 * max(1.0, abs(lam[-1]))
        hi = -lmin + np.linalg.norm(c) + 1.0
        if excess(lo) > 0.0:
            mu = optimize.brentq(excess, lo, hi, xtol=1e-14, maxiter=500)
            x = q @ (c / (lam + mu))
            return x / np.linalg.norm(x)
        # no sign change: the minimiser picks up a component along the smallest eigenvector
        tied = lam <= lmin + 1e-12 * max(1.0, abs(lam[-1]))
        y = np.zeros_like(c)
        y[~tied] = c[~tied] / (lam[~tied] - lmin)
        y[np.argmax(tied)] = math.sqrt(max(0.0, 1.0 - float(y @ y)))
        x = q @ y
        return x / np.linalg.norm(x)

    def constraint_oracle(self):
        return ConstraintOracle(
            g=lambda t: np.array([float(np.dot(t, t)) - 1.0]),
            jacobian=lambda t: 2.0 * np.asarray(t, dtype=float).reshape(1, -1),
        )


def circle() -> Sphere:
    """The set {θ² = 1} in one dimension; project(0) = +1."""
    return Sphere(1)


class PointManifold(Manifold):
    """A single point μ; the constrained statistic is the score statistic"""

    def __init__(self, mu):
        self.mu = np.asarray(mu, dtype=float).reshape(-1)
        self.dimension = self.mu.size
        self.codimension = self.mu.size

    def project(self, theta, a_weight=None):
        return self.mu.copy()

    def constraint_oracle(self):
        return ConstraintOracle(
            g=lambda t: np.asarray(t, dtype=float) - self.mu,
            jacobian=lambda t: np.eye(self.dimension),
        )


class FixedRankManifold(Manifold):
    """
    vec of the p×H matrices of rank m

    Without a weight the projection is the truncated SVD; with weight A it is
    the A-weighted fixed-rank least squares problem.
    """

    def __init__(self, p: int, h: int, m: int, optimizer: Optional[OptimizerConfig] = None):
        if not 0 <= m <= min(p, h):
            raise InvalidInput(f"rank m={m} outside [0, {min(p, h)}]")
        self.p, self.h, self.m = p, h, m
        self.optimizer = optimizer
        self.dimension = p * h
        self.codimension = (p - m) * (h - m)

    def project(self, theta, a_weight=None):
        mat = unvec(theta, self.p, self.h)
        if self.m == 0:
            return np.zeros(self.dimension)
        if a_weight is None:
            return vec(nearest_rank_frobenius(mat, self.m)[0])
        point = min_discrepancy.solve(mat, symmetric_sqrt(a_weight), self.m, self.optimizer)
        return vec(point.matrix)


class ConstrainedFit(NamedTuple):
    theta_c: np.ndarray
    statistic: float


def _check_weight(a: Optional[np.ndarray], dim: int, name: str) -> Optional[np.ndarray]:
    if a is None:
        return None
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != (dim, dim):
        raise InvalidInput(f"{name} must be {dim}x{dim}, got {a.shape}")
    return a


def constrained_statistic(
    theta_hat: np.ndarray,
    manifold: Manifold,
    a: Optional[np.ndarray] = None,
    b: Optional[np.ndarray] = None,
    n: int = 1,
) -> ConstrainedFit:
    """
    Project θ̂ onto the manifold and measure the distance

    Args:
        theta_hat: Unconstrained estimate
        manifold: Constraint set
        a: Projection metric (identity when None); condition number at most 1e12
        b: Statistic metric (identity when None)
        n: Sample size

    Returns:
        ConstrainedFit(theta_c, n·(θ̂ - θ̂_c)ᵀb(θ̂ - θ̂_c))
    """
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    if theta_hat.size != manifold.dimension:
        raise InvalidInput(f"theta has length {theta_hat.size}, manifold dimension is {manifold.dimension}")
    a = _check_weight(a, manifold.dimension, "a")
    b = _check_weight(b, manifold.dimension, "b")
    if a is not None:
        cond = condition_number(a)
        if not cond <= MAX_CONDITION:
            raise SingularGamma(cond)
    theta_c = np.asarray(manifold.project(theta_hat, a), dtype=float).reshape(-1)
    d = theta_hat - theta_c
    quad = float(d @ d) if b is None else float(d @ b @ d)
    return ConstrainedFit(theta_c, max(n * quad, 0.0))


@dataclass(frozen=True)
class ReplicateDraw:
    """One bootstrap draw: W* and, when the data layer provides it, Γ*"""
    w_star: np.ndarray
    gamma_star: Optional[np.ndarray] = None


Sampler = Callable[[np.random.Generator], Union[np.ndarray, ReplicateDraw]]
MetricRule = Callable[[np.ndarray, ReplicateDraw], Tuple[Optional[np.ndarray], Optional[np.ndarray]]]


@dataclass(frozen=True)
class CsBootstrapConfig:
    """
    CS bootstrap settings

    Args:
        replicates: Number of bootstrap replicates B
        alpha: Test size
        seed: Master seed; replicate b uses the stream keyed by (seed, b)
        w_star_sampler: Draws W* from a generator
        a_star: Fixed projection metric for every replicate (reuses Â when None)
        b_star: Fixed statistic metric for every replicate (reuses B̂ when None)
        metric_rule: Builds (A*, B*) from θ*₀ and the draw; overrides a_star/b_star
        workers: Threads used to evaluate replicates
    """
    replicates: int = DEFAULT_BOOTSTRAP_REPLICATES
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    w_star_sampler: Optional[Sampler] = None
    a_star: Optional[np.ndarray] = None
    b_star: Optional[np.ndarray] = None
    metric_rule: Optional[MetricRule] = None
    workers: int = 1
    max_failure_rate: float = MAX_REPLICATE_FAILURE_RATE

    def __post_init__(self):
        if self.replicates < 1:
            raise InvalidInput("replicates must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.w_star_sampler is None:
            raise InvalidInput("a W* sampler is required")
        if self.workers < 1:
            raise InvalidInput("workers must be positive")


@dataclass(frozen=True)
class CsBootstrapOutcome:
    statistic: float
    replicate_values: np.ndarray
    quantile: float
    p_value: float
    reject: bool
    failures: int = 0
    theta_c: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def replicates(self) -> int:
        return int(self.replicate_values.size) + self.failures


def order_statistic_index(count: int, alpha: float) -> int:
    """1-based index ⌈B(1 - alpha)⌉ clamped to [1, B]."""
    k = math.ceil(round(count * (1.0 - alpha), 9))
    return min(max(k, 1), count)


def order_statistic_quantile(values: np.ndarray, alpha: float) -> float:
    """Order statistic Λ*_(⌈B(1-alpha)⌉) of the replicate values."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidInput("no replicate values")
    k = order_statistic_index(values.size, alpha)
    return float(np.partition(values, k - 1)[k - 1])


def _as_draw(raw: Any) -> ReplicateDraw:
    return raw if isinstance(raw, ReplicateDraw) else ReplicateDraw(np.asarray(raw, dtype=float))


def _run_replicate(
    index: int,
    theta_c: np.ndarray,
    manifold: Manifold,
    n: int,
    cfg: CsBootstrapConfig,
    a_default: Optional[np.ndarray],
    b_default: Optional[np.ndarray],
) -> float:
    draw = _as_draw(cfg.w_star_sampler(replicate_rng(cfg.seed, index)))
    w = vec(draw.w_star) if draw.w_star.ndim == 2 else draw.w_star.reshape(-1)
    if w.size != theta_c.size:
        raise InvalidInput(f"W* has {w.size} entries, expected {theta_c.size}")
    if not np.all(np.isfinite(w)):
        raise NumericalBreakdown(f"non-finite W* in replicate {index}")
    theta0 = theta_c + w / math.sqrt(n)
    if cfg.metric_rule is not None:
        a_s, b_s = cfg.metric_rule(theta0, draw)
    else:
        a_s = cfg.a_star if cfg.a_star is not None else a_default
        b_s = cfg.b_star if cfg.b_star is not None else b_default
    return constrained_statistic(theta0, manifold, a_s, b_s, n).statistic


def cs_bootstrap_from_fit(
    theta_c: np.ndarray,
    statistic: float,
    manifold: Manifold,
    n: int,
    cfg: CsBootstrapConfig,
    a_default: Optional[np.ndarray] = None,
    b_default: Optional[np.ndarray] = None,
) -> CsBootstrapOutcome:
    """
    Replicate loop for an already computed (θ̂_c, Λ̂)

    Replicates that fail numerically are excluded; more than
    cfg.max_failure_rate of them raises BootstrapUnstable.
    """
    theta_c = np.asarray(theta_c, dtype=float).reshape(-1)
    results: Dict[int, float] = {}
    failures = 0

    def record(idx: int, call: Callable[[], float]) -> None:
        nonlocal failures
        try:
            results[idx] = call()
        except NUMERICAL_ERRORS as e:
            failures += 1
            logger.debug("replicate %d failed: %s", idx, e)

    args = (theta_c, manifold, n, cfg, a_default, b_default)
    if cfg.workers == 1:
        for idx in range(cfg.replicates):
            record(idx, lambda: _run_replicate(idx, *args))
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            future_to_index = {
                executor.submit(_run_replicate, idx, *args): idx for idx in range(cfg.replicates)
            }
            for future in as_completed(future_to_index):
                record(future_to_index[future], future.result)

    if failures > cfg.max_failure_rate * cfg.replicates:
        raise BootstrapUnstable(failures, cfg.replicates)
    if failures:
        logger.info("⚠️  %d of %d bootstrap replicates excluded", failures, cfg.replicates)
    values = np.array([results[i] for i in sorted(results)])
    values.setflags(write=False)
    q = order_statistic_quantile(values, cfg.alpha)
    return CsBootstrapOutcome(
        statistic=float(statistic),
        replicate_values=values,
        quantile=q,
        p_value=float(np.mean(values >= statistic)),
        reject=bool(statistic > q),
        failures=failures,
        theta_c=theta_c,
    )


def cs_bootstrap(
    theta_hat: np.ndarray,
    manifold: Manifold,
    a_hat: Optional[np.ndarray],
    b_hat: Optional[np.ndarray],
    n: int,
    cfg: CsBootstrapConfig,
) -> CsBootstrapOutcome:
    """
    CS bootstrap test of θ ∈ manifold

    Args:
        theta_hat: Unconstrained estimate
        manifold: Constraint set
        a_hat: Projection metric for the observed statistic
        b_hat: Statistic metric for the observed statistic
        n: Sample size
        cfg: Bootstrap settings

    Returns:
        CsBootstrapOutcome; deterministic given cfg.seed
    """
    fit = constrained_statistic(theta_hat, manifold, a_hat, b_hat, n)
    return cs_bootstrap_from_fit(fit.theta_c, fit.statistic, manifold, n, cfg, a_hat, b_hat)


def linearization_residual(
    manifold: Manifold,
    theta_c: np.ndarray,
    delta: np.ndarray,
    a: Optional[np.ndarray] = None,
) -> float:
    """
    Error of the first-order expansion project(θ_c + δ) ≈ θ_c + (I - P)δ

    P = A⁻¹Jᵀ(JA⁻¹Jᵀ)⁻¹J with J the constraint Jacobian at θ_c.

    Raises:
        InvalidInput: If the manifold has no explicit constraint
        NonsingularityViolated: If J is rank deficient at θ_c
    """
    oracle = manifold.constraint_oracle()
    if oracle is None:
        raise InvalidInput("manifold has no explicit constraint function")
    theta_c = np.asarray(theta_c, dtype=float).reshape(-1)
    delta = np.asarray(delta, dtype=float).reshape(-1)
    dim = theta_c.size
    a_mat = np.eye(dim) if a is None else np.atleast_2d(np.asarray(a, dtype=float))
    jac = np.atleast_2d(oracle.jacobian(theta_c))
    if np.linalg.matrix_rank(jac) < jac.shape[0]:
        raise NonsingularityViolated(f"constraint Jacobian has rank below {jac.shape[0]}")
    a_inv_jt = np.linalg.solve(a_mat, jac.T)
    proj = a_inv_jt @ np.linalg.solve(jac @ a_inv_jt, jac)
    moved = np.asarray(manifold.project(theta_c + delta, a), dtype=float).reshape(-1)
    return float(np.linalg.norm(moved - theta_c - (np.eye(dim) - proj) @ delta))
