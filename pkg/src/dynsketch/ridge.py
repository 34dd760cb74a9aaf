"""Sketched ridge regression with a factored solution ``A^T S^T X~``.

Rows of ``A`` are drawn by length-squared sampling, columns of ``SA`` by
the two-stage scheme, and the small ``m_S x m_S`` system
``(SAR)(SAR)^T + lam I`` is solved by conjugate gradient.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DynSketchError, EmptyStructureError
from .linalg import thin_svd
from .sampler import (
    ColSampler,
    DynSamp,
    RowSampler,
    len_sq_sample_cols_of_SA,
    len_sq_sample_rows,
    sampled_rows,
)

POWER_ITERS = 30
SIGMA1_SAFETY = 1.1
SIGMAK_SAFETY = 0.9


@dataclass(frozen=True)
class RidgeConfig:
    lam: float
    epsilon: float = 0.3
    sigma_k_lower: float | None = None
    sigma_1_upper: float | None = None
    c_rows: float = 2.0
    c_cols: float = 2.0
    cg_tol: float = 1e-8
    cg_max_iters: int | None = None
    # explicit sample sizes for experiments; None means use the formulas
    m_rows: int | None = None
    m_cols: int | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        lo, hi = self.sigma_k_lower, self.sigma_1_upper
        if lo is not None and lo < 0:
            raise ValueError("sigma_k_lower must be nonnegative")
        if lo is not None and hi is not None and lo > hi:
            raise ValueError("sigma_k_lower exceeds sigma_1_upper")
        if lo == 0 and self.lam == 0:
            raise ValueError("lam must be positive when sigma_k_lower is zero")


@dataclass(frozen=True)
class CGResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


def conjugate_gradient(
    matvec: Callable[[np.ndarray], np.ndarray] | np.ndarray,
    rhs: np.ndarray,
    tol: float = 1e-8,
    max_iters: int = 1000,
) -> CGResult:
    """Solve ``M x = rhs`` for symmetric positive definite ``M`` from ``x = 0``.

    Stops when ``||M x - rhs|| <= tol * ||rhs||``.
    """
    if not callable(matvec):
        mat = np.asarray(matvec, dtype=float)
        matvec = mat.__matmul__
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b)
    r = b.copy()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CGResult(x, 0, 0.0, True)
    p = r.copy()
    rr = float(r @ r)
    stop = tol * b_norm
    for it in range(1, max_iters + 1):
        mp = matvec(p)
        pmp = float(p @ mp)
        if not math.isfinite(pmp):
            raise ConvergenceError("conjugate gradient produced a non-finite value")
        if pmp <= 0:
            raise ConvergenceError("operator is not positive definite")
        step = rr / pmp
        x += step * p
        r -= step * mp
        rr_new = float(r @ r)
        if not math.isfinite(rr_new):
            raise ConvergenceError("conjugate gradient produced a non-finite value")
        if math.sqrt(rr_new) <= stop:
            return CGResult(x, it, math.sqrt(rr_new), True)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(x, max_iters, math.sqrt(rr), False)


@dataclass(frozen=True)
class RidgeSolution:
    x_tilde: np.ndarray
    row_sampler: RowSampler
    col_sampler: ColSampler
    cg_iterations: int
    residual_norm: float
    converged: bool
    m_rows: int
    m_cols: int
    build_seconds: float = 0.0
    solve_seconds: float = 0.0

    def entry(self, ds: DynSamp, i: int, j: int) -> float:
        return solution_entry(self, ds, i, j)

    def materialize(self, ds: DynSamp) -> np.ndarray:
        """Dense ``A^T S^T X~`` (``d x d'``)."""
        return sampled_rows(ds, self.row_sampler).T @ self.x_tilde


def _ridge_scalars(cfg: RidgeConfig) -> tuple[float, float]:
    denom = cfg.lam + cfg.sigma_k_lower**2
    if denom <= 0:
        raise DynSketchError("lam + sigma_k^2 must be positive")
    z_lam = 1.0 / math.sqrt(denom)
    kappa = z_lam * math.sqrt(cfg.lam + cfg.sigma_1_upper**2)
    return z_lam, kappa


def ridge_sample_sizes(cfg: RidgeConfig, frob_sq: float, n: int, d: int) -> tuple[int, int]:
    """``(m_S, m_R)`` from the formulas, each capped at ``n`` and ``d``."""
    if frob_sq <= 0:
        raise EmptyStructureError("matrix is zero")
    if cfg.m_rows is not None:
        m_s = min(int(cfg.m_rows), n)
    else:
        z_lam, kappa = _ridge_scalars(cfg)
        raw = cfg.c_rows * kappa**2 * z_lam**2 * frob_sq * math.log(d + 1) / cfg.epsilon**2
        m_s = min(max(1, math.ceil(raw)), n)
    if cfg.m_cols is not None:
        m_r = min(int(cfg.m_cols), d)
    else:
        z_lam, _ = _ridge_scalars(cfg)
        raw = cfg.c_cols * math.log(max(m_s, 2)) * z_lam**2 * frob_sq / cfg.epsilon**2
        m_r = min(max(1, math.ceil(raw)), d)
    return m_s, m_r


def estimate_sigma_1(ds: DynSamp, rng: np.random.Generator, iters: int = POWER_ITERS) -> float:
    """Power iteration on ``A^T A`` through the sparse snapshot, times a safety factor."""
    a = ds.to_csr()
    x = rng.standard_normal(ds.n_cols)
    x /= np.linalg.norm(x)
    s = 0.0
    for _ in range(iters):
        y = a.T @ (a @ x)
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return 0.0
        s = math.sqrt(ny)
        x = y / ny
    return SIGMA1_SAFETY * s


def estimate_sigma_k(ds: DynSamp, rng: np.random.Generator, oversample: int = 4) -> float:
    """Smallest nonzero singular value of a length-squared row sketch, times a safety factor."""
    n, d = ds.shape
    m = min(n, oversample * min(n, d))
    sa = sampled_rows(ds, len_sq_sample_rows(ds, m, rng))
    f = thin_svd(sa).truncated()
    return SIGMAK_SAFETY * float(f.sigma[-1]) if f.sigma.size else 0.0


def with_estimates(cfg: RidgeConfig, ds: DynSamp, rng: np.random.Generator) -> RidgeConfig:
    """Fill in missing singular value bounds."""
    s1, sk = cfg.sigma_1_upper, cfg.sigma_k_lower
    if s1 is None:
        s1 = estimate_sigma_1(ds, rng)
    if sk is None:
        sk = min(estimate_sigma_k(ds, rng), s1)
    return replace(cfg, sigma_1_upper=s1, sigma_k_lower=sk)


def ridge_solve(
    ds: DynSamp, b: np.ndarray, cfg: RidgeConfig, rng: np.random.Generator | None = None
) -> RidgeSolution:
    rng = np.random.default_rng() if rng is None else rng
    t0 = time.perf_counter()
    n, d = ds.shape
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    if b.shape[0] != n:
        raise ValueError(f"b has {b.shape[0]} rows, expected {n}")
    if ds.frob_sq <= 0:
        raise EmptyStructureError("matrix is zero")
    if cfg.m_rows is None or cfg.m_cols is None:
        cfg = with_estimates(cfg, ds, rng)
    m_s, m_r = ridge_sample_sizes(cfg, ds.frob_sq, n, d)
    s = RowSampler.identity(n) if m_s >= n else len_sq_sample_rows(ds, m_s, rng)
    sa = sampled_rows(ds, s)
    r = ColSampler.identity(d) if m_r >= d else len_sq_sample_cols_of_SA(ds, s, m_r, rng, sa=sa)
    sar = r.apply(sa)
    m = sar @ sar.T
    m[np.diag_indices_from(m)] += cfg.lam
    sb = s.apply(b)
    t1 = time.perf_counter()
    max_iters = cfg.cg_max_iters
    if max_iters is None:
        if cfg.sigma_1_upper is not None and cfg.sigma_k_lower is not None and (
            cfg.lam + cfg.sigma_k_lower**2 > 0
        ):
            kappa = _ridge_scalars(cfg)[1] ** 2
        else:
            kappa = float(np.linalg.cond(m))
        max_iters = int(10 * math.sqrt(kappa) + 100)
    x = np.zeros((m.shape[0], b.shape[1]))
    its, res, ok = 0, 0.0, True
    for col in range(b.shape[1]):
        out = conjugate_gradient(m, sb[:, col], cfg.cg_tol, max_iters)
        x[:, col] = out.x
        its = max(its, out.iterations)
        res = max(res, out.residual_norm)
        ok = ok and out.converged
    t2 = time.perf_counter()
    return RidgeSolution(x, s, r, its, res, ok, s.m, r.m, t1 - t0, t2 - t1)


def solution_entry(sol: RidgeSolution, ds: DynSamp, i: int, j: int) -> float:
    """``(A^T S^T X~)[i, j]`` touching only the ``m_S`` sampled rows."""
    n, d = ds.shape
    if not (0 <= i < d and 0 <= j < sol.x_tilde.shape[1]):
        raise IndexError(f"solution entry ({i}, {j}) out of range")
    s = sol.row_sampler
    vals = np.array([ds.get_entry(int(r), i) for r in s.indices.tolist()])
    return float(np.sum(s.scales * vals * sol.x_tilde[:, j]))
