"""Turnstile-updatable length-squared sampling over a sparse matrix.

:class:`DynSamp` keeps one :class:`~dynsketch.tree.WeightedTree` per row
(over that row's entries) and one over the row norms. The samplers it
produces are immutable snapshots carrying the probabilities that were in
force at draw time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import EmptyStructureError
from .tree import WeightedTree


@dataclass(frozen=True)
class SparseMatrix:
    """Coordinate matrix with canonical (sorted, de-duplicated, nonzero) entries."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_coo(cls, shape, rows, cols, vals) -> SparseMatrix:
        """Build from coordinates; duplicates are summed and zeros dropped."""
        n, d = int(shape[0]), int(shape[1])
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= d):
            raise IndexError("coordinate outside matrix bounds")
        m = sparse.coo_matrix((vals, (rows, cols)), shape=(n, d)).tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        c = m.tocoo()
        return cls(n, d, c.row.astype(np.int64), c.col.astype(np.int64), c.data.astype(float))

    @classmethod
    def from_dense(cls, a) -> SparseMatrix:
        a = np.asarray(a, dtype=float)
        r, c = np.nonzero(a)
        return cls(a.shape[0], a.shape[1], r.astype(np.int64), c.astype(np.int64), a[r, c])

    @classmethod
    def from_entries(cls, shape, entries: dict) -> SparseMatrix:
        if not entries:
            return cls.from_coo(shape, [], [], [])
        r, c = zip(*entries.keys())
        return cls.from_coo(shape, r, c, list(entries.values()))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    @property
    def entries(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(v) for i, j, v in zip(self.rows, self.cols, self.vals)}

    def to_scipy(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.vals, (self.rows, self.cols)), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.vals
        return out


@dataclass(frozen=True)
class Sampler:
    """Sampling matrix rows ``e_i^T / sqrt(p_i m)``, one per pick.

    ``indices[t]`` is the picked index, ``probs[t]`` its probability and
    ``scales[t] = 1 / sqrt(probs[t] * m)``.
    """

    dim: int
    indices: np.ndarray
    probs: np.ndarray
    scales: np.ndarray
    fallback: bool = False
    trials: int = 0

    @classmethod
    def from_picks(cls, dim: int, indices, probs, **kw):
        indices = np.asarray(indices, dtype=np.int64)
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise ValueError("pick probabilities must be positive")
        scales = 1.0 / np.sqrt(probs * indices.size)
        return cls(dim, indices, probs, scales, **kw)

    @classmethod
    def identity(cls, dim: int):
        """Exact pass-through: every index once with unit scale."""
        return cls(dim, np.arange(dim, dtype=np.int64), np.full(dim, 1.0 / dim), np.ones(dim))

    @property
    def m(self) -> int:
        return int(self.indices.size)

    @property
    def is_identity(self) -> bool:
        return self.m == self.dim and bool(np.all(self.indices == np.arange(self.dim))) and bool(
            np.all(self.scales == 1.0)
        )

    def matrix(self) -> np.ndarray:
        """Dense ``m x dim`` form of the sampling matrix."""
        out = np.zeros((self.m, self.dim))
        out[np.arange(self.m), self.indices] = self.scales
        return out


class RowSampler(Sampler):
    """Represents ``S`` so that ``S @ A`` stacks scaled rows of ``A``."""

    def apply(self, a) -> np.ndarray:
        return self.scales[:, None] * np.asarray(a)[self.indices]


class ColSampler(Sampler):
    """Represents ``R`` so that ``A @ R`` stacks scaled columns of ``A``."""

    def apply(self, a) -> np.ndarray:
        return np.asarray(a)[:, self.indices] * self.scales

    def compose(self, inner: ColSampler) -> ColSampler:
        """The product ``self @ inner`` where ``inner`` samples columns of ``A @ self``."""
        idx = self.indices[inner.indices]
        scales = self.scales[inner.indices] * inner.scales
        probs = 1.0 / (scales**2 * inner.m)
        return ColSampler(self.dim, idx, probs, scales)


class DynSamp:
    """Length-squared sampling structure for an ``n x d`` matrix under turnstile updates."""

    def __init__(self, n_rows: int, n_cols: int):
        if n_rows < 1 or n_cols < 1:
            raise ValueError("matrix dimensions must be positive")
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_trees: dict[int, WeightedTree] = {}
        self.length_tree = WeightedTree(id_dtype=np.int64)
        self.version = 0
        self._csr_cache: tuple[int, sparse.csr_matrix] | None = None

    @classmethod
    def from_matrix(cls, m) -> DynSamp:
        """Bulk build from a :class:`SparseMatrix`, scipy sparse matrix or dense array."""
        if not isinstance(m, SparseMatrix):
            m = SparseMatrix.from_coo(m.shape, *_coo(m))
        ds = cls(m.n_rows, m.n_cols)
        if m.nnz == 0:
            return ds
        bounds = np.searchsorted(m.rows, np.arange(m.n_rows + 1))
        row_ids, norms_sq = [], []
        for i in np.flatnonzero(np.diff(bounds)):
            lo, hi = bounds[i], bounds[i + 1]
            t = WeightedTree.from_items(m.cols[lo:hi], m.vals[lo:hi], id_dtype=np.int64)
            ds.row_trees[int(i)] = t
            row_ids.append(int(i))
            norms_sq.append(t.total)
        ds.length_tree = WeightedTree.from_weights(
            np.asarray(row_ids, dtype=np.int64), norms_sq, id_dtype=np.int64
        )
        return ds

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def frob_sq(self) -> float:
        return self.length_tree.total

    @property
    def nnz(self) -> int:
        return sum(len(t) for t in self.row_trees.values())

    def _check(self, i: int, j: int) -> None:
        if not (0 <= i < self.n_rows and 0 <= j < self.n_cols):
            raise IndexError(f"entry ({i}, {j}) outside {self.n_rows}x{self.n_cols}")

    def update_entry(self, i: int, j: int, value: float) -> None:
        """Set ``A[i, j] = value``; zero removes the entry."""
        i, j = int(i), int(j)
        self._check(i, j)
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value!r}")
        tree = self.row_trees.get(i)
        if value == 0.0:
            if tree is None or j not in tree:
                return
            tree.delete(j)
        else:
            if tree is None:
                tree = self.row_trees[i] = WeightedTree(id_dtype=np.int64)
            tree.upsert(j, value)
        self.length_tree.upsert_weight(i, tree.total)
        self.version += 1

    def add_to_entry(self, i: int, j: int, delta: float) -> None:
        """Additive turnstile update ``A[i, j] += delta``."""
        self.update_entry(i, j, self.get_entry(i, j) + float(delta))

    def get_entry(self, i: int, j: int) -> float:
        i, j = int(i), int(j)
        self._check(i, j)
        tree = self.row_trees.get(i)
        return 0.0 if tree is None else tree.get(j)

    def row_norm_sq(self, i: int) -> float:
        tree = self.row_trees.get(int(i))
        return 0.0 if tree is None else tree.total

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of the stored entries of row ``i``."""
        tree = self.row_trees.get(int(i))
        if tree is None:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        return tree.leaf_ids(), tree.leaf_values()

    def dense_rows(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        out = np.zeros((rows.size, self.n_cols))
        cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for t, i in enumerate(rows.tolist()):
            if i not in cache:
                cache[i] = self.row(i)
            cols, vals = cache[i]
            out[t, cols] = vals
        return out

    def to_csr(self) -> sparse.csr_matrix:
        """Snapshot as a scipy CSR matrix, cached until the next update."""
        if self._csr_cache is not None and self._csr_cache[0] == self.version:
            return self._csr_cache[1]
        rows, cols, vals = [], [], []
        for i, tree in self.row_trees.items():
            if len(tree):
                c, v = tree.leaf_ids(), tree.leaf_values()
                rows.append(np.full(c.size, i, dtype=np.int64))
                cols.append(c)
                vals.append(v)
        if rows:
            m = sparse.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=self.shape
            )
        else:
            m = sparse.csr_matrix(self.shape)
        m.sort_indices()
        self._csr_cache = (self.version, m)
        return m

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def to_sparse_matrix(self) -> SparseMatrix:
        c = self.to_csr().tocoo()
        return SparseMatrix.from_coo(self.shape, c.row, c.col, c.data)

    # -- sampling -----------------------------------------------------------

    def sample_row(self, rng: np.random.Generator) -> int:
        """Row ``i`` with probability ``||A_i||^2 / ||A||_F^2``."""
        if self.frob_sq <= 0:
            raise EmptyStructureError("cannot sample rows of a zero matrix")
        return int(self.length_tree.sample(rng))

    def sample_rows(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.frob_sq <= 0:
            raise EmptyStructureError("cannot sample rows of a zero matrix")
        return self.length_tree.sample_many(size, rng).astype(np.int64)

    def sample_entry_in_row(self, i: int, rng: np.random.Generator) -> int:
        """Column ``j`` with probability ``A_ij^2 / ||A_i||^2``."""
        tree = self.row_trees.get(int(i))
        if tree is None or tree.total <= 0:
            raise EmptyStructureError(f"row {i} is empty")
        return int(tree.sample(rng))

    def sample_entries_in_row(self, i: int, size: int, rng: np.random.Generator) -> np.ndarray:
        tree = self.row_trees.get(int(i))
        if tree is None or tree.total <= 0:
            raise EmptyStructureError(f"row {i} is empty")
        return tree.sample_many(size, rng).astype(np.int64)


def _coo(m):
    if sparse.issparse(m):
        c = m.tocoo()
        return c.row, c.col, c.data
    a = np.asarray(m, dtype=float)
    r, c = np.nonzero(a)
    return r, c, a[r, c]


def len_sq_sample_rows(ds: DynSamp, m_s: int, rng: np.random.Generator) -> RowSampler:
    """``m_s`` i.i.d. length-squared row picks (with replacement)."""
    if m_s < 1:
        raise ValueError("m_s must be at least 1")
    frob = ds.frob_sq
    if frob <= 0:
        raise EmptyStructureError("cannot sample rows of a zero matrix")
    idx = ds.sample_rows(m_s, rng)
    probs = np.array([ds.row_norm_sq(i) for i in idx.tolist()]) / frob
    return RowSampler.from_picks(ds.n_rows, idx, probs)


def sampled_rows(ds: DynSamp, s: RowSampler) -> np.ndarray:
    """Dense ``S @ A`` built by touching only the sampled rows."""
    return s.scales[:, None] * ds.dense_rows(s.indices)


def len_sq_sample_cols_of_SA(
    ds: DynSamp, s: RowSampler, m_r: int, rng: np.random.Generator, sa: np.ndarray | None = None
) -> ColSampler:
    """``m_r`` column picks of ``S @ A`` with probability ``||(SA)_j||^2 / ||SA||_F^2``.

    Each pick first draws a sampled row ``t`` proportionally to
    ``||(SA)_t||^2`` and then a column inside row ``i_t`` through its row
    tree. The recorded probability is the exact column marginal.
    """
    if m_r < 1:
        raise ValueError("m_r must be at least 1")
    row_w = s.scales**2 * np.array([ds.row_norm_sq(i) for i in s.indices.tolist()])
    total = row_w.sum()
    if total <= 0:
        raise EmptyStructureError("S @ A is the zero matrix")
    picks_t = rng.choice(s.m, size=m_r, p=row_w / total)
    cols = np.empty(m_r, dtype=np.int64)
    for t in np.unique(picks_t):
        where = np.flatnonzero(picks_t == t)
        cols[where] = ds.sample_entries_in_row(int(s.indices[t]), where.size, rng)
    if sa is None:
        sa = sampled_rows(ds, s)
    q = np.einsum("ij,ij->j", sa[:, cols], sa[:, cols]) / total
    return ColSampler.from_picks(ds.n_cols, cols, q)
