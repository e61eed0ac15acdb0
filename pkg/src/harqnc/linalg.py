"""Small batched linear-algebra helpers.

Products are written as broadcast multiply + last-axis sum instead of BLAS
matmul so each element is computed the same way whatever the batch size;
this keeps traces bit-identical across worker counts and chunkings.
"""

from __future__ import annotations

import numpy as np


def mv(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``M @ x`` over the trailing axis of ``x`` (any leading batch shape)."""
    return (x[..., None, :] * M).sum(axis=-1)


def quad(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``x' M x`` over the trailing axis."""
    return (x * mv(M, x)).sum(axis=-1)


def psd_factor(M: np.ndarray) -> np.ndarray:
    """A factor F with F F' = M; Cholesky when possible, else eigen-based."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh((M + M.T) / 2)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))
