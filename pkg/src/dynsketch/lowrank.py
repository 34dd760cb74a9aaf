"""Rank-``k`` factors ``A R W S A`` and column-conditional row sampling.

The build chains length-squared sketches, two projection-cost preserving
stages on the small sketched matrix, a QR basis and a leverage-score
refinement of the column sample. Queries draw a row index ``i`` with
probability ``(ARWSA)_ij^2 / ||(ARWSA)_{*,j}||^2`` by rejection from a
proposal that only needs ``AR`` and trees over it.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import EmptyStructureError, StageError
from .leverage import DEFAULT_EPS0, lev_sample
from .linalg import best_rank_k_error, pseudo_inverse, ridge_spectrum, thin_svd
from .sampler import (
    ColSampler,
    DynSamp,
    RowSampler,
    Sampler,
    len_sq_sample_cols_of_SA,
    len_sq_sample_rows,
    sampled_rows,
)
from .tree import StaticForest, WeightedTree

log = logging.getLogger(__name__)

C_BETA = 8.0
C_ALPHA = 2.0
MAX_BATCH = 200_000


@dataclass(frozen=True)
class LowRankConfig:
    k: int
    epsilon: float = 0.5
    sigma_k_lower: float | None = None
    tau: float | None = None
    c1: float = 2.0
    c2: float = 2.0
    c3: float = 2.0
    c4: float = 2.0
    eps0: float = DEFAULT_EPS0
    # (r, c) overrides: rows of S and columns of R1 / R3
    m_rows: int | None = None
    m_cols: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.sigma_k_lower is not None and self.sigma_k_lower <= 0:
            raise ValueError("sigma_k_lower must be positive")


def _check_nonzero(stage: str, m: np.ndarray) -> None:
    if not np.any(m):
        raise StageError(stage)


def pcp_sample(
    small: np.ndarray, k: int, eps: float, axis: str, rng: np.random.Generator, c2: float = 2.0
) -> Sampler:
    """Ridge-leverage sampling of rows (or columns) of a small dense matrix.

    The ridge weight is ``||small - small_k||_F^2 / k``. When ``k`` reaches
    the smaller dimension or the sample would be at least as large as the
    sampled axis, the identity sampler is returned.
    """
    if axis not in ("rows", "cols"):
        raise ValueError("axis must be 'rows' or 'cols'")
    small = np.asarray(small, dtype=float)
    m_axis = small if axis == "rows" else small.T
    cls = RowSampler if axis == "rows" else ColSampler
    dim = m_axis.shape[0]
    m = math.ceil(c2 * k * math.log(k + 1) / eps**2)
    if k >= min(small.shape) or m >= dim:
        return cls.identity(dim)
    lam = best_rank_k_error(m_axis, k) ** 2 / k
    scores = ridge_spectrum(m_axis, lam).ridge_scores
    total = scores.sum()
    if total <= 0:
        raise StageError("pcp", "zero matrix")
    p = scores / total
    idx = rng.choice(dim, size=m, p=p)
    return cls.from_picks(dim, idx, p[idx])


@dataclass(frozen=True)
class LowRankModel:
    w: np.ndarray
    row_sampler: RowSampler
    col_sampler: ColSampler
    sa: np.ndarray
    ar_cache: np.ndarray
    ar_col_tree: WeightedTree
    col_forest: StaticForest
    beta_sketch: np.ndarray
    kappa_est: float
    k: int
    rank_deficient: bool = False
    build_seconds: float = 0.0
    stage_sizes: dict | None = None
    stages: dict | None = None

    @classmethod
    def from_factors(
        cls,
        ar: np.ndarray,
        w: np.ndarray,
        sa: np.ndarray,
        k: int,
        row_sampler: RowSampler | None = None,
        col_sampler: ColSampler | None = None,
        beta_sketch: np.ndarray | None = None,
        kappa_est: float | None = None,
        **extra,
    ) -> "LowRankModel":
        """Model from explicit ``AR``, ``W`` and ``SA`` with the query trees built over ``AR``."""
        ar = np.ascontiguousarray(ar, dtype=float)
        w = np.asarray(w, dtype=float)
        sa = np.asarray(sa, dtype=float)
        if ar.shape[1] != w.shape[0] or w.shape[1] != sa.shape[0]:
            raise ValueError("factor shapes do not chain")
        col_sq = np.einsum("ij,ij->j", ar, ar)
        col_tree = WeightedTree.from_weights(np.arange(ar.shape[1], dtype=np.int64), col_sq, id_dtype=np.int64)
        if kappa_est is None:
            sig = thin_svd(ar).truncated().sigma
            kappa_est = float(sig[0] / sig[-1]) if sig.size else 1.0
        return cls(
            w=w,
            row_sampler=RowSampler.identity(sa.shape[0]) if row_sampler is None else row_sampler,
            col_sampler=ColSampler.identity(ar.shape[1]) if col_sampler is None else col_sampler,
            sa=sa, ar_cache=ar, ar_col_tree=col_tree, col_forest=StaticForest(ar.T),
            beta_sketch=ar if beta_sketch is None else beta_sketch, kappa_est=kappa_est, k=k, **extra,
        )

    @property
    def m_cols(self) -> int:
        return self.col_sampler.m

    @property
    def alpha(self) -> float:
        """Bound on the expected number of rejection trials per query."""
        return C_ALPHA * self.m_cols * self.kappa_est**2

    def materialize(self) -> np.ndarray:
        return self.ar_cache @ self.w @ self.sa

    def column(self, j: int) -> np.ndarray:
        return self.ar_cache @ (self.w @ self.sa[:, j])


def estimate_spectrum(ds: DynSamp, k: int, rng: np.random.Generator, rows: int | None = None):
    """``(sigma_k_lower, tau)`` from the SVD of a length-squared row sketch."""
    n, d = ds.shape
    m = min(n, rows or max(8 * k, 4 * min(n, d)))
    sa = sampled_rows(ds, RowSampler.identity(n) if m >= n else len_sq_sample_rows(ds, m, rng))
    s = np.linalg.svd(sa, compute_uv=False)
    sig_k = 0.9 * float(s[k - 1]) if s.size >= k else 0.0
    tau = ds.frob_sq - float(np.sum(s[:k] ** 2))
    tau = max(tau, 1e-12 * ds.frob_sq)
    if sig_k <= 0:
        sig_k = math.sqrt(ds.frob_sq) * 1e-6
    return sig_k, tau


def oracle_spectrum(ds: DynSamp, k: int) -> tuple[float, float]:
    """Exact ``(sigma_k, ||A - A_k||_F^2)`` from a dense SVD."""
    s = np.linalg.svd(ds.to_dense(), compute_uv=False)
    tau = float(np.sum(s[k:] ** 2))
    return float(s[k - 1]), max(tau, 1e-12 * ds.frob_sq)


def lowrank_sizes(cfg: LowRankConfig, frob_sq: float, sigma_k: float, tau: float) -> dict:
    k, eps = cfg.k, cfg.epsilon
    lam = tau / k
    z_lam_sq = 1.0 / (lam + sigma_k**2)
    z_k_sq = 1.0 / sigma_k**2
    m_s = math.ceil(cfg.c1 * math.log(k + 1) * z_lam_sq * frob_sq / eps**2)
    m_r3 = math.ceil(
        cfg.c3 * (math.log(k + 1) / cfg.eps0**2 + 1.0 / eps) * z_k_sq * frob_sq / eps
    )
    f = math.ceil(cfg.c4 * (k * math.log(k + 1) / cfg.eps0**2 + k / eps))
    return {"lambda": lam, "m_s": m_s, "m_r1": m_s, "m_r3": m_r3, "f": f, "z_k_sq": z_k_sq}


def build_low_rank(
    ds: DynSamp, cfg: LowRankConfig, rng: np.random.Generator | None = None, keep_stages: bool = False
) -> LowRankModel:
    """Run the sketch chain; ``keep_stages`` retains intermediate matrices on ``model.stages``."""
    rng = np.random.default_rng() if rng is None else rng
    t0 = time.perf_counter()
    n, d = ds.shape
    k = cfg.k
    if ds.frob_sq <= 0:
        raise StageError("input")
    if k > min(n, d):
        raise ValueError(f"k={k} exceeds min(n, d)={min(n, d)}")
    sig_k, tau = cfg.sigma_k_lower, cfg.tau
    if sig_k is None or tau is None:
        est_sig, est_tau = estimate_spectrum(ds, k, rng)
        sig_k = est_sig if sig_k is None else sig_k
        tau = est_tau if tau is None else tau
    sz = lowrank_sizes(cfg, ds.frob_sq, sig_k, tau)
    m_s = min(cfg.m_rows or sz["m_s"], n)
    m_r1 = min(cfg.m_cols or sz["m_r1"], d)
    m_r3 = min(cfg.m_cols or sz["m_r3"], d)

    s = RowSampler.identity(n) if m_s >= n else len_sq_sample_rows(ds, m_s, rng)
    sa = sampled_rows(ds, s)
    _check_nonzero("S A", sa)
    r1 = ColSampler.identity(d) if m_r1 >= d else len_sq_sample_cols_of_SA(ds, s, m_r1, rng, sa=sa)
    sar1 = r1.apply(sa)
    _check_nonzero("S A R1", sar1)

    r2 = pcp_sample(sar1, k, cfg.epsilon, "cols", rng, cfg.c2)
    sar12 = r2.apply(sar1)
    _check_nonzero("S A R1 R2", sar12)
    s2 = pcp_sample(sar12, k, cfg.epsilon, "rows", rng, cfg.c2)
    small = s2.apply(sar12)
    _check_nonzero("S2 S A R1 R2", small)

    v = thin_svd(small).V[:, :k]
    u, _ = sla.qr(sar12 @ v, mode="economic")
    _check_nonzero("U", u)

    r3 = ColSampler.identity(d) if m_r3 >= d else len_sq_sample_cols_of_SA(ds, s, m_r3, rng, sa=sa)
    usar3 = u.T @ r3.apply(sa)
    _check_nonzero("U^T S A R3", usar3)
    f = sz["f"]
    if f >= r3.m:
        r4 = ColSampler.identity(r3.m)
    else:
        lev = lev_sample(usar3.T, mu_s=max(1.0, math.log(r3.m)), target_size=f, rng=rng)
        ls = lev.sampler
        r4 = ColSampler(ls.dim, ls.indices, ls.probs, ls.scales, ls.fallback, ls.trials)
    r = r3.compose(r4)

    usar = u.T @ r.apply(sa)
    _check_nonzero("U^T S A R", usar)
    rank = thin_svd(usar).rank
    if rank < k:
        log.warning("rank(U^T S A R) = %d < k = %d", rank, k)
    w = pseudo_inverse(usar) @ u.T

    a_csr = ds.to_csr()
    ar = a_csr[:, r.indices].toarray() * r.scales
    _check_nonzero("A R", ar)
    col_sq = np.einsum("ij,ij->j", ar, ar)

    sar_sigma = thin_svd(s.apply(ar)).truncated().sigma
    kappa = float(sar_sigma[0] / sar_sigma[-1])

    # length-squared row sketch of AR for estimating ||AR v||^2
    z_k_sq = 1.0 / sig_k**2
    m_beta = min(n, max(1, math.ceil(C_BETA * z_k_sq * float(col_sq.sum()))))
    if m_beta >= n:
        beta_sketch = ar
    else:
        row_sq = np.einsum("ij,ij->i", ar, ar)
        p = row_sq / row_sq.sum()
        idx = rng.choice(n, size=m_beta, p=p)
        beta_sketch = ar[idx] / np.sqrt(p[idx] * m_beta)[:, None]

    sizes = {
        "m_s": s.m, "m_r1": r1.m, "m_r2": r2.m, "m_s2": s2.m,
        "m_r3": r3.m, "m_r4": r4.m, "m_r": r.m, "m_beta": int(beta_sketch.shape[0]),
        "lambda": sz["lambda"], "tau": tau, "sigma_k": sig_k,
    }
    stages = None
    if keep_stages:
        stages = {"sar1": sar1, "u": u, "usa": u.T @ sa, "usar": usar, "r1": r1, "r3": r3, "r4": r4}
    return LowRankModel.from_factors(
        ar, w, sa, k, row_sampler=s, col_sampler=r, beta_sketch=beta_sketch, kappa_est=kappa,
        rank_deficient=rank < k, build_seconds=time.perf_counter() - t0, stage_sizes=sizes, stages=stages,
    )


@dataclass(frozen=True)
class ErrorMetric:
    value: float
    absolute: bool

    def __float__(self) -> float:
        return self.value


def model_error(model: LowRankModel, ds: DynSamp) -> ErrorMetric:
    """``||A - Y||_F / ||A - A_k||_F - 1`` for ``Y = ARWSA``.

    When ``A`` has rank at most ``k`` the ratio is undefined and the
    absolute error ``||A - Y||_F`` is returned with ``absolute=True``.
    """
    a = ds.to_dense()
    err = float(np.linalg.norm(a - model.materialize()))
    best = best_rank_k_error(a, model.k)
    if best <= 1e-12 * math.sqrt(ds.frob_sq):
        return ErrorMetric(err, True)
    return ErrorMetric(err / best - 1.0, False)


@dataclass(frozen=True)
class QueryResult:
    rows: np.ndarray
    trials: int
    alpha_v: float
    beta_v: float
    doublings: int


def sample_rows_given_column(
    model: LowRankModel, j: int, size: int, rng: np.random.Generator
) -> QueryResult:
    """``size`` i.i.d. rows from ``(ARWSA)_{ij}^2 / ||(ARWSA)_{*,j}||^2``.

    Proposal: ``j*`` with probability proportional to ``||AR_{*,j*}||^2 v_j*^2``,
    then ``i`` with probability ``AR_{i,j*}^2 / ||AR_{*,j*}||^2``. The
    acceptance probability ``(AR_i v)^2 / (nnz(v) sum_j AR_ij^2 v_j^2)`` is at
    most one by Cauchy-Schwarz, so accepted draws follow the target exactly.
    """
    if not 0 <= j < model.sa.shape[1]:
        raise IndexError(f"column {j} out of range")
    v = model.w @ model.sa[:, j]
    v[np.abs(v) <= 1e-300] = 0.0
    nnz = int(np.count_nonzero(v))
    col_sq = model.ar_col_tree.leaf_weights()
    prop_w = col_sq * v * v
    total = float(prop_w.sum())
    beta = float(np.sum((model.beta_sketch @ v) ** 2))
    if nnz == 0 or total <= 0 or not np.any(model.ar_cache @ v):
        raise EmptyStructureError(f"column {j} of the model is zero")
    alpha_v = nnz * total / max(beta, 1e-300)
    alpha = model.alpha
    doublings = 0
    while alpha_v > alpha:
        alpha *= 2.0
        doublings += 1
    if doublings:
        log.info("query column %d: alpha doubled %d times", j, doublings)
    col_tree = WeightedTree.from_weights(np.arange(v.size, dtype=np.int64), prop_w, id_dtype=np.int64)
    ar = model.ar_cache
    v2 = v * v
    out: list[np.ndarray] = []
    got = 0
    trials = 0
    # beta estimates ||AR v||^2, so alpha_v estimates the expected trials per draw
    rate = 1.0 / max(alpha_v, 1.0)
    while got < size:
        batch = int(min(MAX_BATCH, max(32, math.ceil(1.2 * (size - got) / rate))))
        js = col_tree.sample_many(batch, rng).astype(np.int64)
        rows = model.col_forest.sample(js, rng)
        sub = ar[rows]
        num = (sub @ v) ** 2
        den = nnz * ((sub * sub) @ v2)
        accept = rng.random(batch) * den < num
        ok = np.flatnonzero(accept)
        need = size - got
        if ok.size >= need:
            ok = ok[:need]
            trials += int(ok[-1]) + 1
        else:
            trials += batch
        out.append(rows[ok])
        got += ok.size
    return QueryResult(np.concatenate(out), trials, alpha_v, beta, doublings)


def sample_row_given_column(model: LowRankModel, j: int, rng: np.random.Generator) -> int:
    return int(sample_rows_given_column(model, j, 1, rng).rows[0])


def query_distribution(model: LowRankModel, j: int) -> np.ndarray:
    """Exact target distribution for column ``j`` (dense oracle)."""
    col = model.column(j)
    sq = col * col
    return sq / sq.sum()
