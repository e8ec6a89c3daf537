"""Dense float32 matrix kernels used by every other module.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype ``float32``.
``as_matrix`` is the single entry point that validates and coerces input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float32


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 2-D array with finite entries."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _check_product(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    _check_product(a, b)
    return a @ b


def matmul_blocked(a, b, block: int) -> np.ndarray:
    """Tiled product: ``block`` x ``block`` tiles, traversed i, j, then k.

    The k-accumulation order is fixed, so results are reproducible for a
    given block size. With a single tile this is exactly ``matmul``.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    _check_product(a, b)
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    m, k = a.shape
    n = b.shape[1]
    if block >= max(m, k, n):
        return a @ b
    out = np.empty((m, n), dtype=DTYPE)
    for i0 in range(0, m, block):
        i1 = min(i0 + block, m)
        for j0 in range(0, n, block):
            j1 = min(j0 + block, n)
            acc = a[i0:i1, 0:min(block, k)] @ b[0:min(block, k), j0:j1]
            for k0 in range(block, k, block):
                k1 = min(k0 + block, k)
                acc += a[i0:i1, k0:k1] @ b[k0:k1, j0:j1]
            out[i0:i1, j0:j1] = acc
    return out


@dataclass(frozen=True)
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        gamma = np.ascontiguousarray(self.gamma, dtype=DTYPE).reshape(-1)
        beta = np.ascontiguousarray(self.beta, dtype=DTYPE).reshape(-1)
        if gamma.shape != beta.shape:
            raise DimensionError(f"gamma length {gamma.size} != beta length {beta.size}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def identity(cls, dim: int, epsilon: float = 1e-5) -> LayerNormParams:
        return cls(np.ones(dim, DTYPE), np.zeros(dim, DTYPE), epsilon)

    @property
    def dim(self) -> int:
        return self.gamma.size


def layer_norm_rows(x, p: LayerNormParams) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.shape[1] != p.dim:
        raise DimensionError(f"layer norm of width {p.dim} applied to {x.shape[0]}x{x.shape[1]}")
    mean = x.mean(axis=1, keepdims=True, dtype=DTYPE)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True, dtype=DTYPE)
    normed = centered / np.sqrt(var + DTYPE(p.epsilon))
    return normed * p.gamma + p.beta


def softmax_rows(x) -> np.ndarray:
    x = as_matrix(x, "x")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True, dtype=DTYPE)
