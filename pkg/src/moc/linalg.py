"""Dense matrix helpers and the SiLU nonlinearity.

Matrices are plain 2-D float64 numpy arrays. The wrappers here only add the
shape checking the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


def as_matrix(data, dtype=DTYPE) -> np.ndarray:
    """Coerce nested sequences / arrays into a finite 2-D matrix."""
    m = np.asarray(data, dtype=dtype)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def _check_2d(*mats):
    for m in mats:
        if np.ndim(m) != 2:
            raise ShapeError(f"expected a 2-D matrix, got shape {np.shape(m)}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def transpose(a: np.ndarray) -> np.ndarray:
    _check_2d(a)
    return np.ascontiguousarray(a.T)


def sigmoid(x):
    """Logistic function, evaluated branchwise so exp never overflows."""
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else out[()]


def silu(x):
    """x * sigmoid(x); works on scalars and arrays."""
    x = np.asarray(x, dtype=DTYPE)
    return x * sigmoid(x)


def silu_grad(x):
    # d/dx [x s(x)] = s(x) (1 + x (1 - s(x)))
    x = np.asarray(x, dtype=DTYPE)
    sig = sigmoid(x)
    return sig * (1.0 + x * (1.0 - sig))
