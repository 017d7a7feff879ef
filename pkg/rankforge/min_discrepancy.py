"""
Weighted fixed-rank projection

Minimises ‖G·vec(M̂ - abᵀ)‖² over a (p×m, orthonormal columns) and b (H×m)
by alternating least squares. The objective depends on a only through its
column span, so each polar-retracted a-update followed by an exact b-update
never increases it.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from rankforge.constants import (
    DEFAULT_MAX_OUTER_ITERATIONS,
    DEFAULT_OBJECTIVE_TOLERANCE,
    DEFAULT_RESTART_SEED,
    DEFAULT_RESTARTS,
)
from rankforge.core_linalg import svd_split, vec
from rankforge.exceptions import (
    InvalidInput,
    NumericalBreakdown,
    OptimizerDidNotConverge,
    RankForgeError,
)
from rankforge.random_streams import derive_rng

logger = logging.getLogger(__name__)

# objectives below this fraction of ‖y‖² count as an exact fit
_EXACT_FIT = 1e-24
# allowed relative increase before a step is rejected
_ASCENT_SLACK = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    """Alternating least squares settings"""
    max_outer_iterations: int = DEFAULT_MAX_OUTER_ITERATIONS
    objective_tolerance: float = DEFAULT_OBJECTIVE_TOLERANCE
    restarts: int = DEFAULT_RESTARTS
    restart_seed: int = DEFAULT_RESTART_SEED
    spectral_starts: bool = True

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise InvalidInput("max_outer_iterations must be positive")
        if not self.objective_tolerance > 0:
            raise InvalidInput("objective_tolerance must be positive")
        if self.restarts < 0:
            raise InvalidInput("restarts must be nonnegative")


@dataclass(frozen=True)
class FactoredPoint:
    """
    Solution abᵀ of the weighted fixed-rank problem

    history holds the objective after every accepted b-update, starting with
    the value at initialisation.
    """
    a: np.ndarray
    b: np.ndarray
    objective: float
    iterations: int = 0
    start: int = 0
    history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def matrix(self) -> np.ndarray:
        return self.a @ self.b.T


class _Problem:
    """Least squares pieces shared by every start"""

    def __init__(self, m_hat: np.ndarray, g: np.ndarray, m: int):
        self.p, self.h = m_hat.shape
        self.m = m
        self.y = g @ vec(m_hat)
        # G[:, h*p + i] -> g3[:, h, i]
        self.g3 = g.reshape(g.shape[0], self.h, self.p)
        self.scale = max(float(self.y @ self.y), np.finfo(float).tiny)

    def b_step(self, a: np.ndarray) -> Tuple[np.ndarray, float]:
        x = np.einsum("rhi,ik->rhk", self.g3, a).reshape(-1, self.h * self.m)
        coef, *_ = np.linalg.lstsq(x, self.y, rcond=None)
        resid = self.y - x @ coef
        return coef.reshape(self.h, self.m), float(resid @ resid)

    def a_design(self, b: np.ndarray) -> np.ndarray:
        return np.einsum("rhi,hk->rki", self.g3, b).reshape(-1, self.m * self.p)

    def a_step(self, b: np.ndarray) -> np.ndarray:
        coef, *_ = np.linalg.lstsq(self.a_design(b), self.y, rcond=None)
        raw = coef.reshape(self.m, self.p).T
        u, _, vt = np.linalg.svd(raw, full_matrices=False)
        return u @ vt

    def gradient_norm(self, a: np.ndarray, b: np.ndarray) -> float:
        z = self.a_design(b)
        resid = self.y - z @ a.T.reshape(-1)
        return float(2.0 * np.linalg.norm(z.T @ resid))


def _descend(problem: _Problem, a0: np.ndarray, cfg: OptimizerConfig, start: int) -> FactoredPoint:
    a = a0
    b, obj = problem.b_step(a)
    if not np.isfinite(obj):
        raise NumericalBreakdown(f"non-finite objective at start {start}")
    history: List[float] = [obj]
    rel = 0.0
    for it in range(1, cfg.max_outer_iterations + 1):
        if obj <= _EXACT_FIT * problem.scale:
            return FactoredPoint(a, b, obj, it - 1, start, tuple(history))
        a_new = problem.a_step(b)
        b_new, obj_new = problem.b_step(a_new)
        if not (np.isfinite(obj_new) and np.all(np.isfinite(a_new))):
            raise NumericalBreakdown(f"non-finite objective at start {start}, iteration {it}")
        if obj_new > obj * (1.0 + _ASCENT_SLACK):
            # rank-deficient a-update; keep the last accepted point
            return FactoredPoint(a, b, obj, it - 1, start, tuple(history))
        rel = (obj - obj_new) / max(obj, np.finfo(float).tiny)
        a, b, obj = a_new, b_new, obj_new
        history.append(obj)
        if rel < cfg.objective_tolerance:
            return FactoredPoint(a, b, obj, it, start, tuple(history))
    if rel > 100.0 * cfg.objective_tolerance:
        raise OptimizerDidNotConverge(problem.gradient_norm(a, b), cfg.max_outer_iterations, rel)
    return FactoredPoint(a, b, obj, cfg.max_outer_iterations, start, tuple(history))


def starting_frames(m_hat: np.ndarray, m: int, cfg: OptimizerConfig) -> List[np.ndarray]:
    """
    Initial orthonormal frames in the order they are tried

    The truncated-SVD frame comes first, then every further window of m
    consecutive left singular vectors, then seeded random frames.
    """
    u = svd_split(m_hat, m).u
    p = u.shape[0]
    frames = [u[:, :m]]
    if cfg.spectral_starts:
        frames.extend(u[:, k:k + m] for k in range(1, p - m + 1))
    for idx in range(cfg.restarts):
        rng = derive_rng(cfg.restart_seed, idx)
        q, _ = np.linalg.qr(rng.standard_normal((p, m)))
        frames.append(q)
    return frames


def solve(
    m_hat: np.ndarray,
    gamma_inv_factor: np.ndarray,
    m: int,
    cfg: Optional[OptimizerConfig] = None,
) -> FactoredPoint:
    """
    Minimise vec(M̂ - M)ᵀ Γ̂⁻¹ vec(M̂ - M) over matrices of rank m

    Args:
        m_hat: p×H matrix
        gamma_inv_factor: pH×pH matrix G with GᵀG = Γ̂⁻¹
        m: Target rank, 1 <= m <= min(p, H)
        cfg: Optimizer settings (defaults when omitted)

    Returns:
        Best FactoredPoint over all starts; ties go to the earliest start

    Raises:
        InvalidInput: Bad dimensions, rank or non-finite inputs
        OptimizerDidNotConverge: Every start ran out of iterations
        NumericalBreakdown: Every start produced non-finite values
    """
    cfg = cfg or OptimizerConfig()
    m_hat = np.asarray(m_hat, dtype=float)
    g = np.asarray(gamma_inv_factor, dtype=float)
    if m_hat.ndim != 2:
        raise InvalidInput("m_hat must be a matrix")
    p, h = m_hat.shape
    if not 1 <= m <= min(p, h):
        raise InvalidInput(f"rank m={m} outside [1, {min(p, h)}]")
    if g.shape != (p * h, p * h):
        raise InvalidInput(f"gamma_inv_factor must be {p * h}x{p * h}, got {g.shape}")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(m_hat))):
        raise InvalidInput("non-finite input to the weighted projection")

    problem = _Problem(m_hat, g, m)
    best: Optional[FactoredPoint] = None
    first_error: Optional[RankForgeError] = None
    for start, frame in enumerate(starting_frames(m_hat, m, cfg)):
        try:
            point = _descend(problem, frame, cfg, start)
        except (OptimizerDidNotConverge, NumericalBreakdown) as e:
            logger.debug("start %d failed: %s", start, e)
            first_error = first_error or e
            continue
        if best is None or point.objective < best.objective:
            best = point
    if best is None:
        raise first_error
    logger.debug("best start %d, objective %.6g after %d iterations", best.start, best.objective, best.iterations)
    return best
