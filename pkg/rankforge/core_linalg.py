"""
Linear algebra shared by every statistic

Column-major vectorisation, SVD splits with a deterministic sign convention,
singular projectors, Kronecker sandwiches and tolerance-controlled inverses.
All functions are pure; returned arrays are fresh copies.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from rankforge.constants import (
    DENSE_KRON_LIMIT,
    MAX_CONDITION,
    PINV_REL_TOL,
    PSD_TOL,
    SPECTRAL_GAP_TOL,
    SYMMETRY_TOL,
)
from rankforge.exceptions import DegenerateSpectrum, InvalidInput, SingularGamma


def vec(matrix: np.ndarray) -> np.ndarray:
    """Stack the columns of a matrix into one vector."""
    return np.asarray(matrix, dtype=float).reshape(-1, order="F")


def unvec(vector: np.ndarray, p: int, h: int) -> np.ndarray:
    """Inverse of vec for a p×H matrix."""
    vector = np.asarray(vector, dtype=float)
    if vector.size != p * h:
        raise InvalidInput(f"cannot reshape vector of length {vector.size} into {p}x{h}")
    return vector.reshape((p, h), order="F")


def _as_finite_matrix(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 2:
        raise InvalidInput(f"{name} must be a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return a


def _symmetrized(a: np.ndarray, name: str) -> np.ndarray:
    if a.shape[0] != a.shape[1]:
        raise InvalidInput(f"{name} must be square, got shape {a.shape}")
    scale = max(float(np.max(np.abs(a))), np.finfo(float).tiny) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise InvalidInput(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class EstimatedMatrix:
    """
    Estimated matrix M̂ (p×H) with the covariance Γ̂ of vec(M̂) and sample size n

    Both orientations are accepted; r = min(p, H) singular values are tested.
    """
    m_hat: np.ndarray
    gamma_hat: np.ndarray
    n: int

    def __post_init__(self):
        m_hat = _as_finite_matrix(self.m_hat, "m_hat")
        p, h = m_hat.shape
        if p < 1 or h < 1:
            raise InvalidInput(f"m_hat must be non-empty, got shape {m_hat.shape}")
        gamma = _as_finite_matrix(self.gamma_hat, "gamma_hat")
        if gamma.shape != (p * h, p * h):
            raise InvalidInput(f"gamma_hat must be {p * h}x{p * h}, got {gamma.shape}")
        gamma = _symmetrized(gamma, "gamma_hat")
        eig = np.linalg.eigvalsh(gamma)
        if eig[0] < -PSD_TOL * max(eig[-1], 0.0):
            raise InvalidInput(f"gamma_hat is not positive semi-definite (smallest eigenvalue {eig[0]:.3g})")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidInput(f"sample size must be an integer >= 2, got {self.n}")
        m_hat.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "m_hat", m_hat)
        object.__setattr__(self, "gamma_hat", gamma)
        object.__setattr__(self, "n", int(self.n))

    @property
    def p(self) -> int:
        return self.m_hat.shape[0]

    @property
    def h(self) -> int:
        return self.m_hat.shape[1]

    @property
    def rank_bound(self) -> int:
        """Number of singular values, min(p, H)."""
        return min(self.m_hat.shape)


@dataclass(frozen=True)
class SvdParts:
    """Full SVD of M̂ split after the m leading singular triplets"""
    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray
    m: int

    @property
    def u1(self) -> np.ndarray:
        return self.u[:, :self.m]

    @property
    def u0(self) -> np.ndarray:
        return self.u[:, self.m:]

    @property
    def v1(self) -> np.ndarray:
        return self.v[:, :self.m]

    @property
    def v0(self) -> np.ndarray:
        return self.v[:, self.m:]

    @property
    def trailing(self) -> np.ndarray:
        return self.singular_values[self.m:]

    def truncated(self) -> np.ndarray:
        """Rank-m truncation U₁D₁V₁ᵀ."""
        return (self.u1 * self.singular_values[:self.m]) @ self.v1.T


@dataclass(frozen=True)
class ProjectorPair:
    """Projectors onto the trailing left (q1) and right (q2) singular spaces"""
    q1: np.ndarray
    q2: np.ndarray

    @property
    def p1(self) -> np.ndarray:
        return np.eye(self.q1.shape[0]) - self.q1

    @property
    def p2(self) -> np.ndarray:
        return np.eye(self.q2.shape[0]) - self.q2


def _fix_signs(u: np.ndarray, v: np.ndarray, r: int) -> Tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of each singular vector nonnegative; argmax picks the lowest index on ties
    for j in range(u.shape[1]):
        if u[np.argmax(np.abs(u[:, j])), j] < 0:
            u[:, j] = -u[:, j]
            if j < r:
                v[:, j] = -v[:, j]
    for j in range(r, v.shape[1]):
        if v[np.argmax(np.abs(v[:, j])), j] < 0:
            v[:, j] = -v[:, j]
    return u, v


def svd_split(m_hat: np.ndarray, m: int) -> SvdParts:
    """
    Full SVD of a p×H matrix with a split after the m leading triplets

    Args:
        m_hat: p×H matrix
        m: Candidate rank, 0 <= m <= min(p, H)

    Returns:
        SvdParts with u (p×p), singular values (descending, length min(p, H)) and v (H×H)

    Raises:
        InvalidInput: If the matrix has non-finite entries or m is out of range
    """
    a = _as_finite_matrix(m_hat, "m_hat")
    r = min(a.shape)
    if not 0 <= m <= r:
        raise InvalidInput(f"split index m={m} outside [0, {r}]")
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    u, v = _fix_signs(u.copy(), vt.T.copy(), r)
    return SvdParts(u=u, singular_values=s, v=v, m=int(m))


def projectors(parts: SvdParts) -> ProjectorPair:
    """
    Singular projectors Q̂₁ = Û₀Û₀ᵀ and Q̂₂ = V̂₀V̂₀ᵀ

    Raises:
        DegenerateSpectrum: If λ_m - λ_{m+1} <= 1e-10·λ₁ for 1 <= m < min(p, H)
    """
    s = parts.singular_values
    m = parts.m
    if 1 <= m < s.size:
        if s[m - 1] - s[m] <= SPECTRAL_GAP_TOL * s[0]:
            raise DegenerateSpectrum(s[m - 1], s[m], m)
    u0 = parts.u0
    v0 = parts.v0
    return ProjectorPair(q1=u0 @ u0.T, q2=v0 @ v0.T)


def nearest_rank_frobenius(m_hat: np.ndarray, m: int) -> Tuple[np.ndarray, float]:
    """
    Frobenius-nearest matrix of rank at most m (Eckart-Young)

    Returns:
        Tuple of (P̂₁M̂P̂₂, sum of the squared trailing singular values)
    """
    parts = svd_split(m_hat, m)
    projectors(parts)
    return parts.truncated(), float(np.sum(parts.trailing ** 2))


def sandwich(proj: ProjectorPair, gamma: np.ndarray) -> np.ndarray:
    """
    (Q₂ ⊗ Q₁) Γ (Q₂ ⊗ Q₁) in column-major vec coordinates

    Large problems are handled blockwise without forming the Kronecker product.
    """
    p = proj.q1.shape[0]
    h = proj.q2.shape[0]
    k = p * h
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (k, k):
        raise InvalidInput(f"gamma must be {k}x{k} for p={p}, H={h}, got {gamma.shape}")
    if k <= DENSE_KRON_LIMIT:
        kron = np.kron(proj.q2, proj.q1)
        out = kron @ gamma @ kron
    else:
        # vec index a*p + i  ->  block (a, i)
        g4 = gamma.reshape(h, p, h, p)
        out = np.einsum(
            "ac,ik,ckdl,db,lj->aibj", proj.q2, proj.q1, g4, proj.q2, proj.q1, optimize=True
        ).reshape(k, k)
    return 0.5 * (out + out.T)


def pseudo_inverse(a: np.ndarray, rel_tol: float = PINV_REL_TOL) -> Tuple[np.ndarray, int]:
    """
    Moore-Penrose inverse of a symmetric matrix by eigendecomposition

    Args:
        a: Symmetric k×k matrix
        rel_tol: Eigenvalues with magnitude below rel_tol·(largest magnitude) are zeroed

    Returns:
        Tuple of (pseudo-inverse, effective rank)
    """
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + a.T)
    w, q = np.linalg.eigh(a)
    top = np.max(np.abs(w)) if w.size else 0.0
    if top == 0.0:
        return np.zeros_like(a), 0
    keep = np.abs(w) > rel_tol * top
    qk = q[:, keep]
    inv = (qk / w[keep]) @ qk.T
    return 0.5 * (inv + inv.T), int(np.count_nonzero(keep))


def symmetric_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative eigenvalues clipped)."""
    a = np.asarray(a, dtype=float)
    w, q = np.linalg.eigh(0.5 * (a + a.T))
    root = (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T
    return 0.5 * (root + root.T)


def condition_number(a: np.ndarray) -> float:
    """Ratio of extreme eigenvalues of a symmetric matrix, inf when not positive definite."""
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    if w[0] <= 0:
        return float("inf")
    return float(w[-1] / w[0])


def inverse_sqrt_factor(gamma: np.ndarray, max_condition: float = MAX_CONDITION) -> np.ndarray:
    """
    Symmetric factor G with GᵀG = Γ⁻¹

    Raises:
        SingularGamma: If the condition number of gamma exceeds max_condition
    """
    gamma = np.asarray(gamma, dtype=float)
    w, q = np.linalg.eigh(0.5 * (gamma + gamma.T))
    cond = float("inf") if w[0] <= 0 else float(w[-1] / w[0])
    if not cond <= max_condition:
        raise SingularGamma(cond)
    g = (q / np.sqrt(w)) @ q.T
    return 0.5 * (g + g.T)


def restrict_columns(est: EstimatedMatrix, basis: np.ndarray) -> EstimatedMatrix:
    """
    Re-express an estimate in the column coordinates of an orthonormal basis R

    M̂ becomes M̂R and Γ̂ becomes (Rᵀ⊗I)Γ̂(R⊗I). Singular values are kept
    whenever the row space of M̂ lies in span(R).

    Args:
        est: Estimate with H columns
        basis: H×k matrix with orthonormal columns

    Raises:
        InvalidInput: If the basis has the wrong height or is not orthonormal
    """
    basis = _as_finite_matrix(basis, "basis")
    if basis.shape[0] != est.h:
        raise InvalidInput(f"basis must have {est.h} rows, got {basis.shape[0]}")
    if not np.allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-10):
        raise InvalidInput("basis columns are not orthonormal")
    t = np.kron(basis, np.eye(est.p))
    return EstimatedMatrix(est.m_hat @ basis, t.T @ est.gamma_hat @ t, est.n)
