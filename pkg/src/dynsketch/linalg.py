"""Dense kernels for sketch-sized matrices and exact spectral oracles.

Everything here works on small dense arrays (the sketches, factors and
desk-scale test inputs). Singular value decompositions are delegated to
LAPACK through numpy; the functions add the rank conventions the rest of
the package relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import ConvergenceError, DynSketchError, EmptyStructureError

RANK_RTOL = 1e-12


def _as_dense(m) -> np.ndarray:
    if hasattr(m, "toarray"):
        m = m.toarray()
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def rank_tolerance(sigma: np.ndarray, shape: tuple[int, int]) -> float:
    """Singular values at or below this are treated as zero."""
    if sigma.size == 0:
        return 0.0
    return max(shape) * float(sigma[0]) * RANK_RTOL


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``m = U @ diag(sigma) @ V.T`` with ``min(rows, cols)`` terms."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self) -> int:
        tol = rank_tolerance(self.sigma, self.shape)
        return int(np.count_nonzero(self.sigma > tol))

    def truncated(self, k: int | None = None) -> SvdFactors:
        """Keep the top ``k`` terms (default: the numerical rank)."""
        k = self.rank if k is None else k
        return SvdFactors(self.U[:, :k], self.sigma[:k], self.V[:, :k])

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T


def thin_svd(m) -> SvdFactors:
    m = _as_dense(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            u, s, vt = sla.svd(m, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    return SvdFactors(u, s, vt.T)


def exact_leverage_scores(m) -> np.ndarray:
    """Squared row norms of an orthonormal basis for the column span."""
    f = thin_svd(m)
    if f.rank == 0:
        raise EmptyStructureError("leverage scores are undefined for a zero matrix")
    u = f.U[:, : f.rank]
    return np.einsum("ij,ij->i", u, u)


@dataclass(frozen=True)
class RidgeSpectrum:
    lam: float
    sigma: np.ndarray
    d_diag: np.ndarray
    sd_lambda: float
    ridge_scores: np.ndarray

    @property
    def pinv_norm_sq(self) -> float:
        """Squared spectral norm of the pseudo-inverse of the ridge-augmented matrix."""
        return float(self.d_diag.max() ** 2) if self.d_diag.size else 0.0


def ridge_spectrum(m, lam: float) -> RidgeSpectrum:
    if lam < 0:
        raise ValueError("ridge weight must be nonnegative")
    f = thin_svd(m).truncated()
    # sigma / sqrt(sigma^2 + lam) in a form that survives sigma^2 underflowing
    with np.errstate(over="ignore"):
        t = 1.0 / np.hypot(1.0, math.sqrt(lam) / f.sigma)
        d_diag = t / f.sigma
    usd = f.U * t
    scores = np.einsum("ij,ij->i", usd, usd)
    sd = float(np.sum(t * t))
    return RidgeSpectrum(float(lam), f.sigma, d_diag, sd, scores)


def best_rank_k_error(m, k: int) -> float:
    """Frobenius distance from ``m`` to its best rank-``k`` approximation."""
    m = _as_dense(m)
    if not 1 <= k <= min(m.shape):
        raise ValueError(f"k={k} outside [1, {min(m.shape)}]")
    s = np.linalg.svd(m, compute_uv=False)
    return float(np.sqrt(np.sum(s[k:] ** 2)))


def best_rank_k(m, k: int) -> np.ndarray:
    f = thin_svd(m).truncated(k)
    return f.reconstruct()


def pseudo_inverse(m) -> np.ndarray:
    f = thin_svd(m).truncated()
    return (f.V / f.sigma) @ f.U.T


def condition_number(m) -> float:
    """Ratio of the largest to the smallest nonzero singular value."""
    f = thin_svd(m).truncated()
    if f.sigma.size == 0:
        raise DynSketchError("condition number of a zero matrix")
    return float(f.sigma[0] / f.sigma[-1])


def ridge_closed_form(a, b, lam: float) -> np.ndarray:
    """Exact minimizer of ``||a x - b||_F^2 + lam ||x||_F^2``."""
    a = _as_dense(a)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    if lam == 0:
        return pseudo_inverse(a) @ b
    n, d = a.shape
    if d <= n:
        return sla.solve(a.T @ a + lam * np.eye(d), a.T @ b, assume_a="pos")
    return a.T @ sla.solve(a @ a.T + lam * np.eye(n), b, assume_a="pos")
