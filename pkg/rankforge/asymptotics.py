"""
Limit laws of the rank statistics

Quantiles and tail probabilities of weighted chi-squared laws Σ νₖ zₖ²
(Monte Carlo, Wood's three-cumulant match, adjusted and rescaled
chi-squared) and of plain chi-squared laws.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np
from scipy import special, stats

from rankforge import settings
from rankforge.caching import memoize
from rankforge.constants import DEFAULT_MC_SEED, MC_CHUNK, ZERO_WEIGHT_TOL
from rankforge.exceptions import InvalidInput

logger = logging.getLogger(__name__)

# |k1·k3 - 2·k2²| below this fraction of k1·k3 means equal weights
_EQUAL_WEIGHTS_TOL = 1e-10


class QuantileMethod(str, Enum):
    MONTE_CARLO = "monte_carlo"
    WOOD = "wood"
    ADJUSTED = "adjusted"
    RESCALED = "rescaled"


@dataclass(frozen=True)
class WeightedChiSq:
    """
    Law of Σ νₖ zₖ² with zₖ i.i.d. standard normal

    Weights below 1e-12 of the largest are dropped. draws and seed only
    matter for the Monte Carlo method.
    """
    weights: Tuple[float, ...]
    method: QuantileMethod = QuantileMethod.MONTE_CARLO
    draws: int = settings.MC_DRAWS
    seed: int = DEFAULT_MC_SEED

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if not np.all(np.isfinite(w)):
            raise InvalidInput("weights must be finite")
        top = float(np.max(np.abs(w))) if w.size else 0.0
        if w.size and np.min(w) < -1e-8 * top:
            raise InvalidInput("weights must be nonnegative")
        if self.draws < 1:
            raise InvalidInput("draws must be positive")
        object.__setattr__(self, "weights", tuple(float(x) for x in np.clip(w, 0.0, None)))
        object.__setattr__(self, "method", QuantileMethod(self.method))

    @property
    def positive_weights(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0 or w.max() <= 0:
            return np.zeros(0)
        return w[w > ZERO_WEIGHT_TOL * w.max()]


@dataclass(frozen=True)
class QuantileEstimate:
    """Quantile value with the method that actually produced it"""
    value: float
    method: QuantileMethod
    used: QuantileMethod
    fallback: bool = False


def _check_level(level: float) -> None:
    if not 0.0 < level < 1.0:
        raise InvalidInput(f"level must lie in (0, 1), got {level}")


def _chi2_ppf(df: float, level: float) -> float:
    return float(2.0 * special.gammaincinv(df / 2.0, level))


@memoize()
def chi2_quantile(df: int, level: float) -> float:
    """
    Inverse CDF of the chi-squared law with df degrees of freedom

    Args:
        df: Positive integer degrees of freedom
        level: Probability in (0, 1)

    Returns:
        The level quantile
    """
    if int(df) != df or df < 1:
        raise InvalidInput(f"degrees of freedom must be a positive integer, got {df}")
    _check_level(level)
    return _chi2_ppf(int(df), level)


def chi2_tail(df: int, x: float) -> float:
    """P(χ²_df >= x)."""
    if df < 1:
        raise InvalidInput(f"degrees of freedom must be positive, got {df}")
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


@memoize(maxsize=8)
def _mc_sample(weights: Tuple[float, ...], draws: int, seed: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    rng = np.random.default_rng(seed)
    out = np.empty(draws)
    for start in range(0, draws, MC_CHUNK):
        size = min(MC_CHUNK, draws - start)
        z = rng.standard_normal((size, w.size))
        out[start:start + size] = (z * z) @ w
    out.sort()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class _WoodFit:
    # b·BetaPrime(x, y), or a gamma law when shape is set
    scale: float
    x: float = 0.0
    y: float = 0.0
    shape: float = 0.0


def _wood_fit(w: np.ndarray):
    k1 = float(np.sum(w))
    k2 = 2.0 * float(np.sum(w ** 2))
    k3 = 8.0 * float(np.sum(w ** 3))
    t2 = k1 * k3 - 2.0 * k2 ** 2
    if abs(t2) <= _EQUAL_WEIGHTS_TOL * k1 * k3:
        # two-moment gamma; exact for equal weights
        return _WoodFit(scale=k2 / k1, shape=k1 ** 2 / k2)
    u = k2 / k1 ** 2
    v = k3 / k1 ** 3
    y = 3.0 + 2.0 * u * (u + 1.0) / (v - 2.0 * u ** 2)
    x = (y - 1.0) / (u * (y - 2.0) - 1.0)
    b = k1 * (y - 1.0) / x
    if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(b)) or x <= 0 or y <= 3:
        return None
    return _WoodFit(scale=b, x=x, y=y)


def _moment_params(w: np.ndarray, method: QuantileMethod) -> Tuple[float, float]:
    if method is QuantileMethod.ADJUSTED:
        return float(np.sum(w ** 2) / np.sum(w)), float(np.sum(w) ** 2 / np.sum(w ** 2))
    return float(np.mean(w)), float(w.size)


def evaluate(law: WeightedChiSq, level: float) -> QuantileEstimate:
    """
    Quantile of a weighted chi-squared law with provenance

    Wood falls back to Monte Carlo when its moment system has no valid
    solution; the fallback is flagged in the result.
    """
    _check_level(level)
    method = law.method
    w = law.positive_weights
    if w.size == 0:
        return QuantileEstimate(0.0, method, method)
    if method is QuantileMethod.WOOD:
        fit = _wood_fit(w)
        if fit is not None:
            if fit.shape:
                value = float(special.gammaincinv(fit.shape, level)) * fit.scale
            else:
                value = fit.scale * float(stats.betaprime.ppf(level, fit.x, fit.y))
            return QuantileEstimate(value, method, method)
        logger.warning("⚠️  Wood moment system infeasible for %d weights, using Monte Carlo", w.size)
    elif method in (QuantileMethod.ADJUSTED, QuantileMethod.RESCALED):
        c, df = _moment_params(w, method)
        return QuantileEstimate(c * _chi2_ppf(df, level), method, method)
    sample = _mc_sample(tuple(w), law.draws, law.seed)
    value = float(np.quantile(sample, level))
    return QuantileEstimate(value, method, QuantileMethod.MONTE_CARLO, fallback=method is QuantileMethod.WOOD)


def quantile(law: WeightedChiSq, level: float) -> float:
    """
    Quantile of Σ νₖ zₖ² at probability level

    Args:
        law: Weights and approximation method
        level: Probability in (0, 1)

    Returns:
        Nonnegative quantile; 0 when every weight is zero
    """
    return evaluate(law, level).value


def tail_probability(law: WeightedChiSq, x: float) -> float:
    """P(Σ νₖ zₖ² >= x) under the law's approximation method."""
    w = law.positive_weights
    if w.size == 0 or x <= 0:
        return 1.0 if x <= 0 else 0.0
    method = law.method
    if method is QuantileMethod.WOOD:
        fit = _wood_fit(w)
        if fit is not None:
            if fit.shape:
                return float(special.gammaincc(fit.shape, x / fit.scale))
            return float(stats.betaprime.sf(x / fit.scale, fit.x, fit.y))
    elif method in (QuantileMethod.ADJUSTED, QuantileMethod.RESCALED):
        c, df = _moment_params(w, method)
        return float(special.gammaincc(df / 2.0, x / (2.0 * c)))
    sample = _mc_sample(tuple(w), law.draws, law.seed)
    return float(1.0 - np.searchsorted(sample, x, side="left") / sample.size)


def weighted(weights: Sequence[float], method: QuantileMethod, **kwargs) -> WeightedChiSq:
    """Convenience constructor accepting any sequence or array of weights."""
    return WeightedChiSq(tuple(np.asarray(weights, dtype=float).ravel()), QuantileMethod(method), **kwargs)
