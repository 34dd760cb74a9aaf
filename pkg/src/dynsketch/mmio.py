"""MatrixMarket coordinate files and the UCI bag-of-words triple format."""

from __future__ import annotations

import io
from pathlib import Path
from typing import TextIO

import numpy as np

from .errors import MatrixMarketError
from .sampler import SparseMatrix

HEADER = "%%MatrixMarket matrix coordinate real general"


def _open(src) -> TextIO:
    if isinstance(src, (str, Path)):
        return open(src, "r", encoding="utf-8")
    return src


def _ints(parts: list[str], lineno: int, what: str) -> list[int]:
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise MatrixMarketError(f"bad {what}: {' '.join(parts)!r}", lineno) from None


def read_matrix_market(src) -> SparseMatrix:
    """Parse a real general coordinate file; indices are 1-based, duplicates summed."""
    fh = _open(src)
    try:
        lines = fh.readlines()
    finally:
        if fh is not src:
            fh.close()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    head = lines[0].split()
    if (
        len(head) != 5
        or head[0] != "%%MatrixMarket"
        or [h.lower() for h in head[1:]] != ["matrix", "coordinate", "real", "general"]
    ):
        raise MatrixMarketError(f"unsupported header {lines[0].strip()!r}", 1)
    pos = 1
    while pos < len(lines) and (not lines[pos].strip() or lines[pos].lstrip().startswith("%")):
        pos += 1
    if pos == len(lines):
        raise MatrixMarketError("missing size line", pos + 1)
    size = lines[pos].split()
    if len(size) != 3:
        raise MatrixMarketError("size line must hold rows, cols and nnz", pos + 1)
    n, d, nnz = _ints(size, pos + 1, "size line")
    if n < 1 or d < 1 or nnz < 0:
        raise MatrixMarketError("dimensions must be positive", pos + 1)
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    t = 0
    for lineno in range(pos + 2, len(lines) + 1):
        text = lines[lineno - 1].strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise MatrixMarketError(f"expected 'row col value', got {text!r}", lineno)
        if t >= nnz:
            raise MatrixMarketError(f"more than the declared {nnz} entries", lineno)
        i, j = _ints(parts[:2], lineno, "index")
        if not (1 <= i <= n and 1 <= j <= d):
            raise MatrixMarketError(f"index ({i}, {j}) outside {n}x{d}", lineno)
        try:
            v = float(parts[2])
        except ValueError:
            raise MatrixMarketError(f"bad value {parts[2]!r}", lineno) from None
        if not np.isfinite(v):
            raise MatrixMarketError(f"non-finite value {parts[2]!r}", lineno)
        rows[t], cols[t], vals[t] = i - 1, j - 1, v
        t += 1
    if t != nnz:
        raise MatrixMarketError(f"declared {nnz} entries but found {t}", len(lines))
    return SparseMatrix.from_coo((n, d), rows, cols, vals)


def write_matrix_market(m: SparseMatrix, dst) -> None:
    """Write entries with ``repr`` floats so that reading back is bit-exact."""
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    buf.write(f"{m.n_rows} {m.n_cols} {m.nnz}\n")
    for i, j, v in zip(m.rows.tolist(), m.cols.tolist(), m.vals.tolist()):
        buf.write(f"{i + 1} {j + 1} {v!r}\n")
    if isinstance(dst, (str, Path)):
        Path(dst).write_text(buf.getvalue(), encoding="utf-8")
    else:
        dst.write(buf.getvalue())


def read_bag_of_words(src) -> SparseMatrix:
    """UCI docword file: three header lines (D, W, NNZ) then ``docID wordID count``."""
    fh = _open(src)
    try:
        lines = fh.readlines()
    finally:
        if fh is not src:
            fh.close()
    if len(lines) < 3:
        raise MatrixMarketError("bag-of-words header needs three lines", len(lines) + 1)
    n_docs, n_words, nnz = (_ints(lines[t].split(), t + 1, "header")[0] for t in range(3))
    data = [ln.split() for ln in lines[3:]]
    rows, cols, vals = [], [], []
    for off, parts in enumerate(data):
        lineno = off + 4
        if not parts:
            continue
        if len(parts) != 3:
            raise MatrixMarketError("expected 'docID wordID count'", lineno)
        i, j, c = _ints(parts, lineno, "triple")
        if not (1 <= i <= n_docs and 1 <= j <= n_words):
            raise MatrixMarketError(f"index ({i}, {j}) outside {n_docs}x{n_words}", lineno)
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(float(c))
    if len(rows) != nnz:
        raise MatrixMarketError(f"declared {nnz} triples but found {len(rows)}", len(lines))
    return SparseMatrix.from_coo((n_docs, n_words), rows, cols, vals)


load_matrix_market = read_matrix_market
