"""Seeded Rademacher probes and the randomized row-norm-squared estimator."""

from __future__ import annotations

import numpy as np

from .linops import aslinearoperator

__all__ = ["make_rng", "rademacher", "estimate_row_norms_sq", "estimate_col_norms_sq"]

# Stream identifiers for independent, replayable draws off one master seed.
ROW_PROBE = 0  # s in R^n, multiplied by A
COL_PROBE = 1  # w in R^m, multiplied by A.T
CHECK_PROBE = 7  # symmetry probes


def make_rng(seed, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for ``(seed, stream)``.

    Distinct stream ids give statistically independent sequences; the same
    pair always gives the same sequence on every platform.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def rademacher(dim, rng: np.random.Generator) -> np.ndarray:
    """Vector (or array of shape ``dim``) of IID +-1 entries as float64."""
    if np.ndim(dim) == 0 and int(dim) < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    bits = rng.integers(0, 2, size=dim, dtype=np.int8)
    return (2.0 * bits - 1.0).astype(np.float64)


def estimate_row_norms_sq(op, rng: np.random.Generator) -> np.ndarray:
    """Unbiased estimate ``|B s|^2`` of the squared row norms of ``B``.

    Uses one product with ``B`` and a fresh Rademacher vector ``s``.
    """
    op = aslinearoperator(op)
    s = rademacher(op.cols, rng)
    return np.square(op.apply(s))


def estimate_col_norms_sq(op, rng: np.random.Generator) -> np.ndarray:
    op = aslinearoperator(op)
    w = rademacher(op.rows, rng)
    return np.square(op.apply_adjoint(w))
