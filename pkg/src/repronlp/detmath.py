"""Deterministic array kernels with fixed sequential accumulation.

Every reduction here (matrix products, axis sums, means) accumulates in a
fixed sequential order over the reduced axis, vectorized only across
independent output elements.  That trades speed for bit-exactness: results
depend solely on the inputs, never on threading, BLAS build, or blocking.
dtype follows the inputs, so the same code runs the f32 training path and
the f64 gradient-check harness.
"""

from __future__ import annotations

import numpy as np


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` for 2-D arrays, accumulated sequentially over the shared axis."""
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(k):
        out += a[:, i : i + 1] * b[i : i + 1, :]
    return out


def seq_sum(arr: np.ndarray, axis: int) -> np.ndarray:
    """Sum along ``axis``, adding slices one at a time in index order."""
    moved = np.moveaxis(arr, axis, 0)
    out = np.zeros(moved.shape[1:], dtype=arr.dtype)
    for i in range(moved.shape[0]):
        out = out + moved[i]
    return out


def seq_mean(values) -> float:
    """Mean of a 1-D sequence accumulated left to right in float64."""
    total = 0.0
    count = 0
    for v in values:
        total += float(v)
        count += 1
    if count == 0:
        raise ValueError("mean of empty sequence")
    return total / count
