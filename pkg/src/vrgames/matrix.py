"""Sparse matrix storage with simultaneous row and column access.

Both a CSR (row) and CSC (column) index are built eagerly: the stochastic
estimators read single rows and single columns in time proportional to their
number of nonzeros, so neither orientation can be derived lazily.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable

import numba
import numpy as np


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input. ``line`` is 1-based (0 if unknown)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class SparseVector:
    length: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.length)
        out[self.indices] = self.values
        return out


@numba.njit(cache=True)
def _csr_matvec(indptr, indices, data, x, out):
    for i in range(len(indptr) - 1):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc
    return out


def _compress(major, minor, vals, n_major):
    """Sort coordinates by (major, minor) and return indptr/indices/data."""
    order = np.lexsort((minor, major))
    major, minor, vals = major[order], minor[order], vals[order]
    counts = np.bincount(major, minlength=n_major)
    indptr = np.zeros(n_major + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, minor.astype(np.int64), vals.astype(np.float64)


class SparseMatrix:
    """Immutable real ``m x n`` sparse matrix indexed by rows and by columns.

    Build with :meth:`from_coo`, :meth:`from_dense`, :func:`load_matrix_market`
    or :func:`generate_random`. Duplicate coordinates are summed and entries that
    end up exactly zero are dropped, so :attr:`nnz` counts true nonzeros.
    """

    def __init__(self, m: int, n: int, rows, cols, vals):
        if m < 1 or n < 1:
            raise ValueError(f"matrix dimensions must be positive, got {m}x{n}")
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValueError("rows, cols and vals must be 1-d arrays of equal length")
        if len(rows) and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise ValueError("coordinate out of range")
        if not np.all(np.isfinite(vals)):
            raise ValueError("matrix entries must be finite")

        # sum duplicates, then drop zeros
        if len(rows):
            key = rows * n + cols
            uniq, inverse = np.unique(key, return_inverse=True)
            summed = np.zeros(len(uniq))
            np.add.at(summed, inverse, vals)
            keep = summed != 0.0
            uniq, summed = uniq[keep], summed[keep]
            rows, cols, vals = uniq // n, uniq % n, summed

        self.m = int(m)
        self.n = int(n)
        self.indptr, self.indices, self.data = _compress(rows, cols, vals, self.m)
        self.col_indptr, self.col_indices, self.col_data = _compress(cols, rows, vals, self.n)
        for arr in (self.indptr, self.indices, self.data,
                    self.col_indptr, self.col_indices, self.col_data):
            arr.setflags(write=False)

    @classmethod
    def from_coo(cls, m: int, n: int, rows, cols, vals) -> "SparseMatrix":
        return cls(m, n, rows, cols, vals)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        r, c = np.nonzero(a)
        return cls(a.shape[0], a.shape[1], r, c, a[r, c])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"SparseMatrix(m={self.m}, n={self.n}, nnz={self.nnz})"

    # -- access -----------------------------------------------------------

    def row(self, i: int) -> SparseVector:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return SparseVector(self.n, self.indices[lo:hi], self.data[lo:hi])

    def col(self, j: int) -> SparseVector:
        lo, hi = self.col_indptr[j], self.col_indptr[j + 1]
        return SparseVector(self.m, self.col_indices[lo:hi], self.col_data[lo:hi])

    def row_nnz(self, i: int) -> int:
        return int(self.indptr[i + 1] - self.indptr[i])

    def col_nnz(self, j: int) -> int:
        return int(self.col_indptr[j + 1] - self.col_indptr[j])

    def coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Coordinates in row-major order, read from the row index."""
        rows = np.repeat(np.arange(self.m), np.diff(self.indptr))
        return rows, self.indices.copy(), self.data.copy()

    def coo_from_columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Coordinates in row-major order, read from the column index."""
        cols = np.repeat(np.arange(self.n), np.diff(self.col_indptr))
        rows = self.col_indices
        order = np.lexsort((cols, rows))
        return rows[order].copy(), cols[order], self.col_data[order].copy()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.m, self.n))
        r, c, v = self.coo()
        out[r, c] = v
        return out

    # -- products ---------------------------------------------------------

    def matvec(self, x) -> np.ndarray:
        """Return ``A @ x``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"matvec: expected vector of length {self.n}, got shape {x.shape}")
        return _csr_matvec(self.indptr, self.indices, self.data, x, np.empty(self.m))

    def matvec_transpose(self, y) -> np.ndarray:
        """Return ``A.T @ y`` using the column index."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.m,):
            raise ValueError(f"matvec_transpose: expected vector of length {self.m}, got shape {y.shape}")
        return _csr_matvec(self.col_indptr, self.col_indices, self.col_data, y, np.empty(self.n))

    # -- norms (cached; the matrix is immutable) ---------------------------

    @cached_property
    def row_norms_sq(self) -> np.ndarray:
        return np.add.reduceat(self.data ** 2, self.indptr[:-1]) * (np.diff(self.indptr) > 0) \
            if self.nnz else np.zeros(self.m)

    @cached_property
    def col_norms_sq(self) -> np.ndarray:
        return np.add.reduceat(self.col_data ** 2, self.col_indptr[:-1]) * (np.diff(self.col_indptr) > 0) \
            if self.nnz else np.zeros(self.n)

    @cached_property
    def col_max_abs(self) -> np.ndarray:
        out = np.zeros(self.n)
        if self.nnz:
            cols = np.repeat(np.arange(self.n), np.diff(self.col_indptr))
            np.maximum.at(out, cols, np.abs(self.col_data))
        return out

    @cached_property
    def norm_max(self) -> float:
        return float(np.max(np.abs(self.data))) if self.nnz else 0.0

    @cached_property
    def norm_2_to_inf(self) -> float:
        return float(np.sqrt(self.row_norms_sq.max()))

    @cached_property
    def norm_fro(self) -> float:
        return float(np.sqrt(np.sum(self.data ** 2)))

    @cached_property
    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.m, self.n], dtype=np.int64).tobytes())
        for arr in (self.indptr, self.indices, self.data):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.data, other.data))

    __hash__ = None


def matvec(a: SparseMatrix, x) -> np.ndarray:
    return a.matvec(x)


def matvec_transpose(a: SparseMatrix, y) -> np.ndarray:
    return a.matvec_transpose(y)


def norm_max(a: SparseMatrix) -> float:
    return a.norm_max


def norm_2_to_inf(a: SparseMatrix) -> float:
    return a.norm_2_to_inf


def norm_fro(a: SparseMatrix) -> float:
    return a.norm_fro


# -- Matrix Market I/O ---------------------------------------------------


def _lines(source) -> Iterable[str]:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    for raw in source:
        yield raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw


def load_matrix_market(source: IO) -> SparseMatrix:
    """Parse a ``coordinate real general|symmetric`` Matrix Market stream.

    ``source`` may be a binary or text stream or a bytes object. Symmetric
    files are expanded to both triangles.
    """
    lines = _lines(source)
    lineno = 0
    try:
        header = next(lines)
        lineno = 1
    except StopIteration:
        raise MatrixMarketError("empty input") from None
    tokens = header.strip().split()
    if len(tokens) != 5 or tokens[0] != "%%MatrixMarket":
        raise MatrixMarketError("missing %%MatrixMarket header", 1)
    obj, fmt, field, sym = (t.lower() for t in tokens[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported format '{obj} {fmt}', need 'matrix coordinate'", 1)
    if field != "real":
        raise MatrixMarketError(f"unsupported field '{field}', need 'real'", 1)
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry '{sym}'", 1)

    size = None
    rows, cols, vals = [], [], []
    declared = 0
    read = 0
    for line in lines:
        lineno += 1
        text = line.strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if size is None:
            if len(parts) != 3:
                raise MatrixMarketError("size line must hold 'rows cols entries'", lineno)
            try:
                size = tuple(int(p) for p in parts)
            except ValueError:
                raise MatrixMarketError(f"non-integer size line '{text}'", lineno) from None
            m, n, declared = size
            if m < 1 or n < 1 or declared < 0:
                raise MatrixMarketError(f"invalid size {m}x{n} with {declared} entries", lineno)
            if sym == "symmetric" and m != n:
                raise MatrixMarketError("symmetric matrix must be square", lineno)
            continue
        if len(parts) != 3:
            raise MatrixMarketError(f"entry line must hold 'row col value', got '{text}'", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise MatrixMarketError(f"non-integer index in '{text}'", lineno) from None
        try:
            v = float(parts[2])
        except ValueError:
            raise MatrixMarketError(f"non-numeric value '{parts[2]}'", lineno) from None
        if not np.isfinite(v):
            raise MatrixMarketError(f"non-finite value '{parts[2]}'", lineno)
        if not (1 <= i <= m and 1 <= j <= n):
            raise MatrixMarketError(f"index ({i}, {j}) out of range for {m}x{n} matrix", lineno)
        if read >= declared:
            raise MatrixMarketError(f"more entries than the declared {declared}", lineno)
        read += 1
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
        if sym == "symmetric" and i != j:
            rows.append(j - 1)
            cols.append(i - 1)
            vals.append(v)
    if size is None:
        raise MatrixMarketError("missing size line", lineno)
    if read != declared:
        raise MatrixMarketError(f"expected {declared} entries, found {read}", lineno)
    return SparseMatrix(m, n, rows, cols, vals)


def save_matrix_market(a: SparseMatrix, sink: IO[str]) -> None:
    """Write ``a`` as ``coordinate real general`` with round-trip precision."""
    sink.write("%%MatrixMarket matrix coordinate real general\n")
    sink.write(f"{a.m} {a.n} {a.nnz}\n")
    r, c, v = a.coo()
    for i, j, x in zip(r.tolist(), c.tolist(), v.tolist()):
        sink.write(f"{i + 1} {j + 1} {x!r}\n")


def dumps_matrix_market(a: SparseMatrix) -> str:
    buf = io.StringIO()
    save_matrix_market(a, buf)
    return buf.getvalue()


# -- instance generation -------------------------------------------------

VALUE_DISTRIBUTIONS = ("uniform", "normal", "sign")


def _draw_values(rng: np.random.Generator, dist: str, size: int) -> np.ndarray:
    if dist == "uniform":
        v = rng.uniform(-1.0, 1.0, size)
    elif dist == "normal":
        v = rng.standard_normal(size)
    elif dist == "sign":
        v = rng.choice([-1.0, 1.0], size)
    else:
        raise ValueError(f"unknown value distribution '{dist}', choose from {VALUE_DISTRIBUTIONS}")
    # exact zeros would silently shrink nnz
    v[v == 0.0] = 1.0
    return v


def generate_random(m: int, n: int, density: float = 1.0, value_dist: str = "uniform",
                    seed: int = 0) -> SparseMatrix:
    """Random sparse instance with at least one nonzero in every row and column.

    The support mask is resampled (up to 50 times) when coverage fails; after
    that, uncovered rows/columns get one random entry each. Fully determined by
    ``seed``.
    """
    if not (0.0 < density <= 1.0):
        raise ValueError(f"density must lie in (0, 1], got {density}")
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got {m}x{n}")
    if value_dist not in VALUE_DISTRIBUTIONS:
        raise ValueError(f"unknown value distribution '{value_dist}', choose from {VALUE_DISTRIBUTIONS}")
    rng = np.random.default_rng(seed)
    if density == 1.0:
        mask = np.ones((m, n), dtype=bool)
    else:
        for _ in range(50):
            mask = rng.random((m, n)) < density
            if mask.any(axis=1).all() and mask.any(axis=0).all():
                break
        else:
            for i in np.flatnonzero(~mask.any(axis=1)):
                mask[i, rng.integers(n)] = True
            for j in np.flatnonzero(~mask.any(axis=0)):
                mask[rng.integers(m), j] = True
    r, c = np.nonzero(mask)
    return SparseMatrix(m, n, r, c, _draw_values(rng, value_dist, len(r)))
