"""Matrix Market reader and writer (real, general; coordinate and array).

Hand-rolled rather than ``scipy.io.mmread`` so that duplicate coordinate
entries are rejected (scipy sums them) and parse errors carry line numbers.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

from .linops import ExplicitMatrix

__all__ = ["MatrixMarketError", "read_matrix_market", "write_matrix_market"]

_BANNER = "%%matrixmarket"


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input."""

    def __init__(self, message, lineno=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if lineno is not None:
            where += f":{lineno}" if where else f"line {lineno}"
        super().__init__(f"{where}: {message}" if where else message)
        self.lineno = lineno


def _data_lines(lines, start):
    """Yield (lineno, stripped text) of non-comment, non-blank lines."""
    for idx in range(start, len(lines)):
        text = lines[idx].strip()
        if not text or text.startswith("%"):
            continue
        yield idx + 1, text


def _parse_float(token, lineno, path):
    try:
        value = float(token)
    except ValueError:
        raise MatrixMarketError(f"not a real number: {token!r}", lineno, path) from None
    if not np.isfinite(value):
        raise MatrixMarketError(f"non-finite value {token!r}", lineno, path)
    return value


def _parse_int(token, lineno, path, what):
    try:
        return int(token)
    except ValueError:
        raise MatrixMarketError(f"{what} is not an integer: {token!r}", lineno, path) from None


def read_matrix_market(path) -> ExplicitMatrix:
    """Read a real general Matrix Market file.

    Coordinate files give a sparse :class:`ExplicitMatrix`, array files a dense one.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError("empty file", 1, path)

    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != _BANNER:
        raise MatrixMarketError("missing or malformed %%MatrixMarket header", 1, path)
    obj, fmt, field, symmetry = (h.lower() for h in header[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"unsupported object {obj!r}", 1, path)
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"unsupported format {fmt!r}", 1, path)
    if field not in ("real", "integer"):
        raise MatrixMarketError(f"unsupported field {field!r}; only real matrices are read", 1, path)
    if symmetry != "general":
        raise MatrixMarketError(f"unsupported symmetry {symmetry!r}", 1, path)

    body = _data_lines(lines, 1)
    try:
        size_lineno, size_text = next(body)
    except StopIteration:
        raise MatrixMarketError("missing size line", len(lines), path) from None
    size = size_text.split()

    if fmt == "coordinate":
        if len(size) != 3:
            raise MatrixMarketError("coordinate size line needs 'rows cols nnz'", size_lineno, path)
        m, n, nnz = (_parse_int(t, size_lineno, path, "size") for t in size)
        if m < 1 or n < 1 or nnz < 0:
            raise MatrixMarketError(f"invalid size {m} {n} {nnz}", size_lineno, path)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        seen = {}
        k = 0
        for lineno, text in body:
            if k >= nnz:
                raise MatrixMarketError(f"more than the declared {nnz} entries", lineno, path)
            parts = text.split()
            if len(parts) != 3:
                raise MatrixMarketError("entry line needs 'row col value'", lineno, path)
            i = _parse_int(parts[0], lineno, path, "row index")
            j = _parse_int(parts[1], lineno, path, "column index")
            if not (1 <= i <= m and 1 <= j <= n):
                raise MatrixMarketError(f"index ({i}, {j}) out of range for {m}x{n}", lineno, path)
            if (i, j) in seen:
                raise MatrixMarketError(
                    f"duplicate entry ({i}, {j}), first seen on line {seen[(i, j)]}", lineno, path
                )
            seen[(i, j)] = lineno
            rows[k], cols[k] = i - 1, j - 1
            vals[k] = _parse_float(parts[2], lineno, path)
            k += 1
        if k != nnz:
            raise MatrixMarketError(f"expected {nnz} entries, found {k}", len(lines), path)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        return ExplicitMatrix(mat)

    if len(size) != 2:
        raise MatrixMarketError("array size line needs 'rows cols'", size_lineno, path)
    m, n = (_parse_int(t, size_lineno, path, "size") for t in size)
    if m < 1 or n < 1:
        raise MatrixMarketError(f"invalid size {m} {n}", size_lineno, path)
    values = []
    for lineno, text in body:
        parts = text.split()
        if len(parts) != 1:
            raise MatrixMarketError("array entry lines hold a single value", lineno, path)
        if len(values) >= m * n:
            raise MatrixMarketError(f"more than the declared {m * n} values", lineno, path)
        values.append(_parse_float(parts[0], lineno, path))
    if len(values) != m * n:
        raise MatrixMarketError(f"expected {m * n} values, found {len(values)}", len(lines), path)
    # array format is column-major
    dense = np.array(values, dtype=np.float64).reshape((n, m)).T
    return ExplicitMatrix(dense)


def write_matrix_market(A, path, comment=None):
    """Write ``A`` with 17 significant digits (exact float64 round trip).

    Sparse matrices use the coordinate format, dense ones the array format.
    """
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    m, n = A.shape
    out = []
    if A.is_sparse:
        coo = A.data.tocoo()
        out.append("%%MatrixMarket matrix coordinate real general")
        if comment:
            out.extend(f"% {line}" for line in str(comment).splitlines())
        out.append(f"{m} {n} {coo.nnz}")
        out.extend(
            f"{i + 1} {j + 1} {v:.17g}" for i, j, v in zip(coo.row, coo.col, coo.data)
        )
    else:
        dense = A.toarray()
        out.append("%%MatrixMarket matrix array real general")
        if comment:
            out.extend(f"% {line}" for line in str(comment).splitlines())
        out.append(f"{m} {n}")
        out.extend(f"{v:.17g}" for v in dense.T.ravel())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")
    os.replace(tmp, path)
