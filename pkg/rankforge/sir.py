"""
Sliced inverse regression

Builds Ĉ = cov(X, Ψ(Y)) from slice indicators, its covariance V̂, the
weighted-bootstrap W* sampler, and the simulation models used for
level/power studies.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from rankforge.constants import DEFAULT_H, DEFAULT_P, DEFAULT_WEIGHT_LAW
from rankforge.core_linalg import EstimatedMatrix, restrict_columns, unvec
from rankforge.exceptions import DegenerateSlicing, InvalidInput
from rankforge.lsce import ReplicateDraw
from rankforge.random_streams import derive_rng

logger = logging.getLogger(__name__)

SLICING_MODES = ("count", "width")
WEIGHT_LAWS = ("rademacher", "normal")
MODEL_IDS = ("I", "Ia", "Ib", "II", "III")


@dataclass(frozen=True)
class SirSample:
    """
    Predictors, responses and slicing configuration

    Args:
        x: n×p predictors
        y: n responses
        h_slices: Number of slices H
        slicing: "count" (equal counts on sorted y) or "width" (equal-width bins of the range)
    """
    x: np.ndarray
    y: np.ndarray
    h_slices: int
    slicing: str = "count"

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.ndim != 2:
            raise InvalidInput(f"x must be n×p, got shape {x.shape}")
        if x.shape[0] != y.size:
            raise InvalidInput(f"x has {x.shape[0]} rows but y has {y.size} entries")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidInput("sample contains non-finite values")
        if self.h_slices < 2 or y.size < self.h_slices:
            raise InvalidInput(f"need n >= H >= 2, got n={y.size}, H={self.h_slices}")
        if self.slicing not in SLICING_MODES:
            raise InvalidInput(f"slicing must be one of {SLICING_MODES}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SliceResult:
    psi: np.ndarray
    labels: np.ndarray
    boundaries: np.ndarray


@dataclass(frozen=True)
class SirMatrices:
    """
    Ĉ, the centred K̂ᵢ and V̂

    vecs holds vec(K̂ᵢ - Ĉ) row by row (n×pH), the layout used by V̂ and the sampler.
    """
    c_hat: np.ndarray
    k_centered: np.ndarray
    v_hat: np.ndarray
    slice_assignment: np.ndarray

    @property
    def n(self) -> int:
        return self.k_centered.shape[0]

    @property
    def vecs(self) -> np.ndarray:
        n, p, h = self.k_centered.shape
        return self.k_centered.transpose(0, 2, 1).reshape(n, p * h)


def slice_indicators(y: np.ndarray, h: int, mode: str = "count") -> SliceResult:
    """
    One-hot slice membership Ψ(Y)

    Args:
        y: Responses
        h: Number of slices
        mode: "count" gives contiguous slices of sorted y with sizes ⌊n/h⌋ or ⌈n/h⌉
            (ties follow stable sort order); "width" cuts the range of y into h
            equal-width bins

    Returns:
        SliceResult with psi (n×h), labels (n) and the upper y value of each slice

    Raises:
        DegenerateSlicing: Fewer distinct responses than slices, or an empty bin
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    if h < 2 or n < h:
        raise InvalidInput(f"need n >= h >= 2, got n={n}, h={h}")
    if np.unique(y).size < h:
        raise DegenerateSlicing(f"{np.unique(y).size} distinct responses cannot fill {h} slices")
    if mode == "count":
        order = np.argsort(y, kind="stable")
        labels = np.empty(n, dtype=int)
        labels[order] = (np.arange(n) * h) // n
    elif mode == "width":
        edges = np.linspace(y.min(), y.max(), h + 1)
        labels = np.clip(np.searchsorted(edges[1:-1], y, side="right"), 0, h - 1)
        counts = np.bincount(labels, minlength=h)
        if np.any(counts == 0):
            raise DegenerateSlicing(f"equal-width slicing left {int(np.sum(counts == 0))} empty slices")
    else:
        raise InvalidInput(f"unknown slicing mode {mode!r}")
    psi = np.zeros((n, h))
    psi[np.arange(n), labels] = 1.0
    boundaries = np.array([y[labels == s].max() for s in range(h)])
    return SliceResult(psi, labels, boundaries)


def build_matrices(s: SirSample) -> Tuple[SirMatrices, EstimatedMatrix]:
    """
    Ĉ = (1/n)Σ K̂ᵢ with K̂ᵢ = (Xᵢ - X̄)(Ψᵢ - Ψ̄)ᵀ, and V̂ = (1/n)Σ vec(K̂ᵢ - Ĉ)vec(K̂ᵢ - Ĉ)ᵀ

    Returns:
        Tuple of (SirMatrices, EstimatedMatrix(Ĉ, V̂, n))
    """
    sliced = slice_indicators(s.y, s.h_slices, s.slicing)
    xc = s.x - s.x.mean(axis=0)
    pc = sliced.psi - sliced.psi.mean(axis=0)
    k = np.einsum("ni,nh->nih", xc, pc)
    c_hat = k.mean(axis=0)
    k_centered = k - c_hat
    vecs = k_centered.transpose(0, 2, 1).reshape(s.n, -1)
    v_hat = vecs.T @ vecs / s.n
    v_hat = 0.5 * (v_hat + v_hat.T)
    matrices = SirMatrices(c_hat, k_centered, v_hat, sliced.labels)
    return matrices, EstimatedMatrix(c_hat, v_hat, s.n)


def contrast_basis(h: int) -> np.ndarray:
    """
    Helmert basis (H×(H-1)) of the vectors orthogonal to the all-ones vector

    Every K̂ᵢ annihilates the all-ones vector, so V̂ is singular in the original
    coordinates and full rank in these.
    """
    if h < 2:
        raise InvalidInput("need at least two slices")
    basis = np.zeros((h, h - 1))
    for k in range(1, h):
        basis[:k, k - 1] = 1.0
        basis[k, k - 1] = -float(k)
        basis[:, k - 1] /= np.sqrt(k * (k + 1.0))
    return basis


def reduce_to_contrasts(est: EstimatedMatrix) -> EstimatedMatrix:
    """Express an SIR estimate in contrast coordinates; singular values are unchanged."""
    return restrict_columns(est, contrast_basis(est.h))


class WStarSampler:
    """
    Weighted bootstrap draws √n·K̄* = n^(-1/2) Σ wᵢ(K̂ᵢ - Ĉ) with their V*

    Weights are i.i.d. with mean 0 and variance 1. Instances hold only
    read-only arrays and can be shared across threads.

    Args:
        matrices: Output of build_matrices
        weight_law: "rademacher" (default) or "normal"
        basis: Optional H×k orthonormal basis; draws and V* are expressed in it
        forced_weights: Use this constant for every wᵢ (testing)
    """

    def __init__(
        self,
        matrices: SirMatrices,
        weight_law: str = DEFAULT_WEIGHT_LAW,
        basis: Optional[np.ndarray] = None,
        forced_weights: Optional[float] = None,
    ):
        if weight_law not in WEIGHT_LAWS:
            raise InvalidInput(f"weight law must be one of {WEIGHT_LAWS}")
        n, p, h = matrices.k_centered.shape
        vecs = matrices.vecs
        if basis is not None:
            basis = np.asarray(basis, dtype=float)
            vecs = vecs @ np.kron(basis, np.eye(p))
            h = basis.shape[1]
        vecs.setflags(write=False)
        self.vecs = vecs
        self.n, self.p, self.h = n, p, h
        self.weight_law = weight_law
        self.forced_weights = forced_weights

    def weights(self, rng: np.random.Generator) -> np.ndarray:
        if self.forced_weights is not None:
            return np.full(self.n, float(self.forced_weights))
        if self.weight_law == "rademacher":
            return 2.0 * rng.integers(0, 2, self.n) - 1.0
        return rng.standard_normal(self.n)

    def w_star(self, rng: np.random.Generator) -> np.ndarray:
        """W* alone, without forming V*."""
        return unvec(self.weights(rng) @ self.vecs / np.sqrt(self.n), self.p, self.h)

    def __call__(self, rng: np.random.Generator) -> ReplicateDraw:
        weighted = self.weights(rng)[:, None] * self.vecs
        w_star = weighted.sum(axis=0) / np.sqrt(self.n)
        centered = weighted - weighted.mean(axis=0)
        v_star = centered.T @ centered / self.n
        return ReplicateDraw(unvec(w_star, self.p, self.h), 0.5 * (v_star + v_star.T))

    @staticmethod
    def gamma_star_rule(draw: ReplicateDraw) -> Optional[np.ndarray]:
        return draw.gamma_star


@dataclass(frozen=True)
class ModelSpec:
    """
    Simulation model

    I    Y = X₁ + 0.1e,                  X ~ N(0, I)
    Ia   as I with i.i.d. Student t₅ coordinates
    Ib   as I with X = 0.1·X₁ᵍ·ε + X₂ᵍ·(1 - ε), ε ~ Bernoulli(1/2),
         X₁ᵍ ~ N((6, 0, ..., 0), I), X₂ᵍ ~ N(0, I)
    II   Y = tanh(X₁) + 0.1e
    III  Y = X₁ / (0.5 + (X₂ + 2)²) + e
    """
    model_id: str
    n: int
    p: int = DEFAULT_P
    h: int = DEFAULT_H
    seed: int = 0

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise InvalidInput(f"model must be one of {MODEL_IDS}, got {self.model_id!r}")
        if self.model_id == "III" and self.p < 2:
            raise InvalidInput("model III needs p >= 2")
        if self.p < 1 or self.h < 2 or self.n < self.h:
            raise InvalidInput(f"invalid dimensions n={self.n}, p={self.p}, H={self.h}")

    @property
    def true_rank(self) -> int:
        return 2 if self.model_id == "III" else 1


def _predictors(model_id: str, rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    if model_id == "Ia":
        return rng.standard_t(5, size=(n, p))
    if model_id == "Ib":
        eps = rng.integers(0, 2, size=(n, 1)).astype(float)
        shifted = rng.standard_normal((n, p))
        shifted[:, 0] += 6.0
        centred = rng.standard_normal((n, p))
        return 0.1 * shifted * eps + centred * (1.0 - eps)
    return rng.standard_normal((n, p))


def generate(model: ModelSpec) -> SirSample:
    """Draw a sample from a simulation model; identical seeds give identical samples."""
    rng = derive_rng(model.seed)
    x = _predictors(model.model_id, rng, model.n, model.p)
    e = rng.standard_normal(model.n)
    if model.model_id == "II":
        y = np.tanh(x[:, 0]) + 0.1 * e
    elif model.model_id == "III":
        y = x[:, 0] / (0.5 + (x[:, 1] + 2.0) ** 2) + e
    else:
        y = x[:, 0] + 0.1 * e
    return SirSample(x, y, model.h)


def read_csv(path: Union[str, Path], h_slices: int = DEFAULT_H, slicing: str = "count") -> SirSample:
    """
    Load a sample from CSV: header row, Y in the first column, X₁..X_p after it

    Raises:
        InvalidInput: Missing or non-numeric values (reported with file line and column)
    """
    frame = pd.read_csv(path)
    if frame.shape[1] < 2:
        raise InvalidInput("CSV needs a response column followed by at least one predictor column")
    missing = frame.isna().to_numpy()
    if missing.any():
        row, col = np.argwhere(missing)[0]
        raise InvalidInput(f"missing value at row {row + 2}, column '{frame.columns[col]}'")
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise InvalidInput(
            f"non-numeric value {frame.iat[row, col]!r} at row {row + 2}, column '{frame.columns[col]}'"
        )
    values = numeric.to_numpy(dtype=float)
    logger.info("📊 read %d observations with %d predictors from %s", values.shape[0], values.shape[1] - 1, path)
    return SirSample(values[:, 1:], values[:, 0], h_slices, slicing)
