"""Leverage-score sampling through an oblivious embedding and rejection.

The stack is: a sparse-sign subspace embedding, the :class:`SampState`
structure (a crude sampler whose row probabilities dominate leverage
scores up to a known factor), rejection sampling towards
``||A_i W||^2 / ||A W||_F^2`` and finally :func:`lev_sample`.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg as sla
from scipy import sparse

from .errors import AcceptanceError, EmptyStructureError, RankDeficientError
from .linalg import RANK_RTOL, RidgeSpectrum
from .sampler import RowSampler
from .tree import WeightedTree

DEFAULT_C_EMB = 8.0
DEFAULT_EPS0 = 1.0 / 3.0
# Gaussian widths are Theta(lambda_s) and Theta(log n); these are the constants.
GAUSS_COLS_PER_LAMBDA = 4.0
GAUSS_COLS_PER_LOGN = 4.0


def _rows(a, idx) -> np.ndarray:
    out = a[idx]
    return out.toarray() if sparse.issparse(out) else np.asarray(out, dtype=float)


@dataclass(frozen=True)
class ObliviousEmbedding:
    """Sparse-sign embedding: each input row lands in one output row with a random sign.

    Rows are spread evenly over the buckets, so for ``n <= m_rows`` the map
    is an exact isometry.
    """

    m_rows: int
    seed: int
    kind: str = "sparse_sign"

    @classmethod
    def for_rank(
        cls, k: int, seed: int, c_emb: float = DEFAULT_C_EMB, eps0: float = DEFAULT_EPS0
    ) -> ObliviousEmbedding:
        k = max(1, int(k))
        m = math.ceil(c_emb * k * math.log(k + 1) / eps0**2)
        return cls(max(1, m), int(seed))

    def sketch_matrix(self, n: int) -> sparse.csr_matrix:
        rng = np.random.default_rng(self.seed)
        # balanced hashing: bucket loads differ by at most one
        buckets = rng.permutation(n) % self.m_rows
        signs = rng.choice(np.array([-1.0, 1.0]), size=n)
        return sparse.csr_matrix((signs, (buckets, np.arange(n))), shape=(self.m_rows, n))

    def apply(self, a) -> np.ndarray:
        """``S @ a`` in time proportional to ``nnz(a)`` plus the dense output."""
        s = self.sketch_matrix(a.shape[0])
        out = s @ a
        return out.toarray() if sparse.issparse(out) else np.asarray(out)


def gaussian_sketch(m: int, c: int, rng: np.random.Generator) -> np.ndarray:
    """``m x c`` matrix of independent N(0, 1/m) entries."""
    return rng.normal(0.0, 1.0 / math.sqrt(m), size=(m, c))


def jl_rows(eps: float, n_vectors: int, delta: float, c_jl: float = 2.0) -> int:
    """Rows for a Gaussian sketch preserving ``n_vectors`` norms to ``1 +- eps`` w.p. ``1 - delta``."""
    return math.ceil(c_jl * math.log(n_vectors / delta) / eps**2)


@dataclass(frozen=True)
class SampState:
    sa: np.ndarray
    c_full: np.ndarray
    c_basis: np.ndarray
    z_tree: WeightedTree
    z_probs: np.ndarray
    g_cols: int
    lambda_s: float
    col_selector: np.ndarray
    embedding: ObliviousEmbedding

    @property
    def rank(self) -> int:
        return int(self.col_selector.size)

    @property
    def nbytes(self) -> int:
        """Array storage of the structure; reported, not bounded."""
        arrays = (self.sa, self.c_full, self.c_basis, self.z_probs, self.col_selector)
        return sum(x.nbytes for x in arrays) + self.z_tree.nbytes


def _r_factor(m: np.ndarray) -> np.ndarray:
    return sla.qr(m, mode="r", check_finite=False)[0]


def build_samp(
    a,
    col_selector,
    lambda_s: float,
    rng: np.random.Generator,
    c_emb: float = DEFAULT_C_EMB,
    eps0: float = DEFAULT_EPS0,
) -> SampState:
    """Crude sampler with ``p_i = ||Z_i||^2 / ||Z||_F^2`` where ``Z = A_sel C^{-1} G``."""
    if lambda_s < 1:
        raise ValueError("lambda_s must be at least 1")
    col_selector = np.asarray(col_selector, dtype=np.int64)
    k = col_selector.size
    n = a.shape[0]
    emb = ObliviousEmbedding.for_rank(k, int(rng.integers(2**63 - 1)), c_emb, eps0)
    sa = emb.apply(a)
    c_basis = _r_factor(sa[:, col_selector])[:k, :k]
    diag = np.abs(np.diag(c_basis))
    if diag.size < k or diag.min() <= max(sa.shape) * RANK_RTOL * max(diag.max(), 1e-300):
        raise RankDeficientError("selected columns are not independent under the embedding")
    c_full = _r_factor(sa)
    m_g = max(1, math.ceil(GAUSS_COLS_PER_LAMBDA * lambda_s))
    g = gaussian_sketch(m_g, k, rng).T  # k x m_g, N(0, 1/m_g)
    cig = sla.solve_triangular(c_basis, g, check_finite=False)
    a_sel = a[:, col_selector]
    z = a_sel @ cig
    z = np.asarray(z)
    z_w = np.einsum("ij,ij->i", z, z)
    tree = WeightedTree.from_weights(np.arange(n, dtype=np.int64), z_w, id_dtype=np.int64)
    return SampState(
        sa=sa,
        c_full=c_full,
        c_basis=c_basis,
        z_tree=tree,
        z_probs=z_w / tree.total,
        g_cols=m_g,
        lambda_s=float(lambda_s),
        col_selector=col_selector,
        embedding=emb,
    )


@dataclass
class AcceptanceMonitor:
    """Process-wide record of every acceptance-ratio check made by :func:`matvec_sampler`."""

    checks: int = 0
    violations: int = 0
    max_ratio: float = 0.0
    active: bool = True

    def record(self, ratio_max: float, violated: bool) -> None:
        if not self.active:
            return
        self.checks += 1
        self.violations += violated
        self.max_ratio = max(self.max_ratio, ratio_max)

    @contextmanager
    def paused(self):
        """Skip recording, for callers that pick an oversized ``nu`` on purpose."""
        prev, self.active = self.active, False
        try:
            yield
        finally:
            self.active = prev


ACCEPTANCE_MONITOR = AcceptanceMonitor()


def default_nu(k: int, n: int, lambda_s: float) -> float:
    return 1.0 / (6.0 * k * n ** (1.0 / lambda_s))


def acceptance_profile(a, samp: SampState, w: np.ndarray, nu: float):
    """Exact per-row proposal probability, estimate ``q~`` and acceptance ratio.

    The accepted index has probability proportional to ``q~`` whenever every
    ratio is at most one; this is what the sampler relies on.
    """
    nrm = float(np.sum((samp.c_full @ w) ** 2))
    aw = np.asarray(a @ w)
    q = np.einsum("ij,ij->i", aw, aw) / nrm
    p = samp.z_probs
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0, nu * q / p, np.where(q > 0, np.inf, 0.0))
    return p, q, ratio


def matvec_sampler(
    a,
    samp: SampState,
    w: np.ndarray,
    v: int,
    nu: float | None = None,
    rng: np.random.Generator | None = None,
) -> RowSampler:
    """``v`` rows drawn with probability close to ``||A_i W||^2 / ||A W||_F^2``.

    Proposals come from ``samp``; index ``i`` is accepted with probability
    ``nu * q~_i / p_i``. A ratio above one raises :class:`AcceptanceError`.
    If ``||C_0 W||_F = 0`` the result is ``v`` uniform picks with
    ``fallback=True``.
    """
    if v < 1:
        raise ValueError("v must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    n = a.shape[0]
    if nu is None:
        nu = default_nu(samp.rank, n, samp.lambda_s)
    w = np.asarray(w, dtype=float)
    norm_cw = float(np.sum((samp.c_full @ w) ** 2))
    if norm_cw == 0.0:
        idx = rng.integers(0, n, size=v)
        return RowSampler.from_picks(n, idx, np.full(v, 1.0 / n), fallback=True)
    accepted: list[np.ndarray] = []
    accepted_q: list[np.ndarray] = []
    got = 0
    trials = 0
    while got < v:
        batch = int(min(1_000_000, max(64, math.ceil(1.25 * (v - got) / nu))))
        idx = samp.z_tree.sample_many(batch, rng).astype(np.int64)
        aw = np.asarray(_rows(a, idx) @ w)
        q = np.einsum("ij,ij->i", aw, aw) / norm_cw
        ratio = nu * q / samp.z_probs[idx]
        rmax = float(ratio.max())
        ACCEPTANCE_MONITOR.record(rmax, rmax > 1.0 + 1e-12)
        if rmax > 1.0 + 1e-12:
            raise AcceptanceError(
                f"acceptance ratio {rmax:.3g} > 1; the embedding event failed"
            )
        ok = np.flatnonzero(rng.random(batch) < ratio)
        need = v - got
        if ok.size >= need:
            ok = ok[:need]
            trials += int(ok[-1]) + 1
        else:
            trials += batch
        accepted.append(idx[ok])
        accepted_q.append(q[ok])
        got += ok.size
    idx = np.concatenate(accepted)
    q = np.concatenate(accepted_q)
    return RowSampler.from_picks(n, idx, q, trials=trials)


@dataclass(frozen=True)
class LeverageSketch:
    sampler: RowSampler
    column_selector: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.column_selector.size)


def independent_columns(a, rng: np.random.Generator, eps0: float = DEFAULT_EPS0) -> np.ndarray:
    """Rank and a maximal set of independent columns via column-pivoted QR of a sketch."""
    n, d = a.shape
    emb = ObliviousEmbedding.for_rank(min(n, d), int(rng.integers(2**63 - 1)), eps0=eps0)
    sa = emb.apply(a)
    r, piv = sla.qr(sa, mode="r", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        raise EmptyStructureError("matrix is zero")
    k = int(np.count_nonzero(diag > max(sa.shape) * diag[0] * RANK_RTOL))
    return piv[:k].astype(np.int64)


def lev_sample(
    a,
    mu_s: float | None = None,
    target_size: int | Callable[[int], int] = None,
    rng: np.random.Generator | None = None,
) -> LeverageSketch:
    """Sample rows of ``a`` proportionally to (approximate) leverage scores."""
    rng = np.random.default_rng() if rng is None else rng
    n = a.shape[0]
    lambda_s = max(1.0, math.log(n + 1)) if mu_s is None else float(mu_s)
    if lambda_s < 1:
        raise ValueError("mu_s must be at least 1")
    cols = independent_columns(a, rng)
    k = cols.size
    a_sel = a[:, cols]
    samp = build_samp(a_sel, np.arange(k), lambda_s, rng)
    m_g = max(1, math.ceil(GAUSS_COLS_PER_LOGN * math.log(n + 1)))
    # a Gaussian reduction only pays off when it has fewer columns than k
    g = gaussian_sketch(m_g, k, rng).T if m_g < k else np.eye(k)
    w = sla.solve_triangular(samp.c_basis, g, check_finite=False)
    if target_size is None:
        v = math.ceil(k * math.log(k + 1) / DEFAULT_EPS0**2)
    elif callable(target_size):
        v = int(target_size(k))
    else:
        v = int(target_size)
    nu = 1.0 / (6.0 * n ** (1.0 / lambda_s))
    sampler = matvec_sampler(a_sel, samp, w, v, nu=nu, rng=rng)
    return LeverageSketch(sampler, cols)


def lensq_cover_size(spectrum: RidgeSpectrum, frob_sq: float, v: int, c: float = 1.0) -> int:
    """Length-squared picks whose expected counts dominate a ridge-leverage sample of size ``v``."""
    return math.ceil(c * v * spectrum.pinv_norm_sq * frob_sq / spectrum.sd_lambda)
