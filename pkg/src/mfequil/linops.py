"""Linear operators: the matrix-free contract and entrywise-accessible matrices.

Matrix-free code in this package only ever calls :meth:`LinearOperator.apply`
and :meth:`LinearOperator.apply_adjoint`.  :class:`ExplicitMatrix` is reserved
for oracles, diagnostics and file I/O.
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinearOperator",
    "MatrixOperator",
    "CallableOperator",
    "ScaledOperator",
    "CountingOperator",
    "ExplicitMatrix",
    "aslinearoperator",
    "apply",
    "apply_adjoint",
    "scale",
    "row_norms_sq_exact",
    "col_norms_sq_exact",
]


def _as_vector(x, size, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != size:
        raise ValueError(f"{what}: expected vector of length {size}, got shape {x.shape}")
    return x


class LinearOperator:
    """Black-box linear map ``R^n -> R^m``.

    Subclasses implement ``_apply`` and ``_apply_adjoint``; the public methods
    validate dimensions.
    """

    def __init__(self, rows: int, cols: int):
        rows, cols = int(rows), int(cols)
        if rows < 1 or cols < 1:
            raise ValueError(f"operator dimensions must be positive, got {rows}x{cols}")
        self._shape = (rows, cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self._shape

    @property
    def rows(self) -> int:
        return self._shape[0]

    @property
    def cols(self) -> int:
        return self._shape[1]

    def apply(self, x) -> np.ndarray:
        """Return ``A @ x``."""
        x = _as_vector(x, self.cols, "apply")
        return self._apply(x)

    def apply_adjoint(self, y) -> np.ndarray:
        """Return ``A.T @ y``."""
        y = _as_vector(y, self.rows, "apply_adjoint")
        return self._apply_adjoint(y)

    def _apply(self, x):
        raise NotImplementedError

    def _apply_adjoint(self, y):
        raise NotImplementedError

    @property
    def T(self) -> "LinearOperator":
        return _AdjointOperator(self)

    def __repr__(self):
        return f"<{type(self).__name__} {self.rows}x{self.cols}>"


class _AdjointOperator(LinearOperator):
    def __init__(self, inner: LinearOperator):
        super().__init__(inner.cols, inner.rows)
        self.inner = inner

    def _apply(self, x):
        return self.inner.apply_adjoint(x)

    def _apply_adjoint(self, y):
        return self.inner.apply(y)

    @property
    def T(self):
        return self.inner


class MatrixOperator(LinearOperator):
    """Operator view of a dense array or scipy sparse matrix."""

    def __init__(self, matrix):
        super().__init__(*matrix.shape)
        self._matrix = matrix

    def _apply(self, x):
        return np.asarray(self._matrix @ x, dtype=np.float64).ravel()

    def _apply_adjoint(self, y):
        return np.asarray(self._matrix.T @ y, dtype=np.float64).ravel()


class CallableOperator(LinearOperator):
    """Operator defined by a pair of user callables."""

    def __init__(self, rows, cols, matvec, rmatvec):
        super().__init__(rows, cols)
        self._matvec = matvec
        self._rmatvec = rmatvec

    def _apply(self, x):
        out = np.asarray(self._matvec(x), dtype=np.float64).ravel()
        if out.shape[0] != self.rows:
            raise ValueError(f"matvec returned length {out.shape[0]}, expected {self.rows}")
        return out

    def _apply_adjoint(self, y):
        out = np.asarray(self._rmatvec(y), dtype=np.float64).ravel()
        if out.shape[0] != self.cols:
            raise ValueError(f"rmatvec returned length {out.shape[0]}, expected {self.cols}")
        return out


class ScaledOperator(LinearOperator):
    """Lazy ``diag(d) @ inner @ diag(e)``."""

    def __init__(self, inner: LinearOperator, d, e):
        inner = aslinearoperator(inner)
        super().__init__(*inner.shape)
        d = _as_vector(d, inner.rows, "row scaling").copy()
        e = _as_vector(e, inner.cols, "column scaling").copy()
        if not (np.all(d > 0) and np.all(e > 0)):
            raise ValueError("scaling vectors must be strictly positive")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("scaling vectors must be finite")
        d.setflags(write=False)
        e.setflags(write=False)
        self.inner = inner
        self.d = d
        self.e = e

    def _apply(self, x):
        return self.d * self.inner.apply(self.e * x)

    def _apply_adjoint(self, y):
        return self.e * self.inner.apply_adjoint(self.d * y)


class CountingOperator(LinearOperator):
    """Wraps an operator and counts products with ``A`` and ``A.T``.

    Counters are guarded by a lock so a shared instance stays consistent when
    products are issued from several threads.
    """

    def __init__(self, inner):
        inner = aslinearoperator(inner)
        super().__init__(*inner.shape)
        self.inner = inner
        self._lock = threading.Lock()
        self._n_apply = 0
        self._n_adjoint = 0

    @property
    def n_apply(self) -> int:
        return self._n_apply

    @property
    def n_adjoint(self) -> int:
        return self._n_adjoint

    def reset(self):
        with self._lock:
            self._n_apply = 0
            self._n_adjoint = 0

    def _apply(self, x):
        with self._lock:
            self._n_apply += 1
        return self.inner.apply(x)

    def _apply_adjoint(self, y):
        with self._lock:
            self._n_adjoint += 1
        return self.inner.apply_adjoint(y)


class ExplicitMatrix:
    """Entrywise-accessible real matrix, dense or CSR sparse.

    Sparse storage is canonical CSR: column indices sorted within each row and
    free of duplicates.  Instances are read-only.
    """

    def __init__(self, data):
        if isinstance(data, ExplicitMatrix):
            data = data.data
        if sp.issparse(data):
            mat = sp.csr_matrix(data, dtype=np.float64, copy=True)
            mat.sum_duplicates()
            mat.sort_indices()
            mat.data.setflags(write=False)
            mat.indices.setflags(write=False)
            mat.indptr.setflags(write=False)
        else:
            mat = np.array(data, dtype=np.float64, copy=True)
            if mat.ndim != 2:
                raise ValueError(f"expected a 2-D array, got shape {mat.shape}")
            mat.setflags(write=False)
        if mat.shape[0] < 1 or mat.shape[1] < 1:
            raise ValueError(f"matrix dimensions must be positive, got {mat.shape}")
        if not np.all(np.isfinite(mat.data if sp.issparse(mat) else mat)):
            raise ValueError("matrix entries must be finite")
        self._data = mat

    @property
    def data(self):
        return self._data

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._data)

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self._data.nnz)
        return int(np.count_nonzero(self._data))

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self._data.toarray()
        return np.array(self._data)

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self._data)

    def squared(self):
        """Entrywise square, same storage kind."""
        if self.is_sparse:
            return self._data.multiply(self._data).tocsr()
        return self._data * self._data

    def scaled(self, d, e) -> "ExplicitMatrix":
        """Materialize ``diag(d) A diag(e)``."""
        d = _as_vector(d, self.rows, "row scaling")
        e = _as_vector(e, self.cols, "column scaling")
        if self.is_sparse:
            return ExplicitMatrix(sp.diags(d) @ self._data @ sp.diags(e))
        return ExplicitMatrix(d[:, None] * self._data * e[None, :])

    def scaled_squares(self, u, v):
        """Entrywise ``|DAE|^2`` with ``D = diag(exp(u))``, ``E = diag(exp(v))``.

        Returned as CSR for sparse storage, ndarray otherwise.
        """
        u = _as_vector(u, self.rows, "u")
        v = _as_vector(v, self.cols, "v")
        if self.is_sparse:
            mat = self._data
            row_of = np.repeat(np.arange(self.rows), np.diff(mat.indptr))
            vals = np.square(mat.data) * np.exp(2.0 * u[row_of] + 2.0 * v[mat.indices])
            return sp.csr_matrix((vals, mat.indices.copy(), mat.indptr.copy()), shape=self.shape)
        return np.square(self._data) * np.exp(2.0 * u[:, None] + 2.0 * v[None, :])

    def as_operator(self) -> MatrixOperator:
        return MatrixOperator(self._data)

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"<ExplicitMatrix {self.rows}x{self.cols} {kind} nnz={self.nnz}>"


def aslinearoperator(obj) -> LinearOperator:
    """Coerce an operator, ExplicitMatrix, ndarray or sparse matrix to a LinearOperator."""
    if isinstance(obj, LinearOperator):
        return obj
    if isinstance(obj, ExplicitMatrix):
        return obj.as_operator()
    if sp.issparse(obj):
        return MatrixOperator(sp.csr_matrix(obj, dtype=np.float64))
    if isinstance(obj, np.ndarray):
        return MatrixOperator(np.asarray(obj, dtype=np.float64))
    raise TypeError(f"cannot interpret {type(obj).__name__} as a linear operator")


def apply(op, x) -> np.ndarray:
    return aslinearoperator(op).apply(x)


def apply_adjoint(op, y) -> np.ndarray:
    return aslinearoperator(op).apply_adjoint(y)


def scale(op, d, e) -> ScaledOperator:
    """Lazy operator representing ``diag(d) @ op @ diag(e)``."""
    return ScaledOperator(op, d, e)


def row_norms_sq_exact(A) -> np.ndarray:
    """Exact squared l2 norms of the rows of ``A``."""
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    sq = A.squared()
    return np.asarray(sq.sum(axis=1), dtype=np.float64).ravel()


def col_norms_sq_exact(A) -> np.ndarray:
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    sq = A.squared()
    return np.asarray(sq.sum(axis=0), dtype=np.float64).ravel()
