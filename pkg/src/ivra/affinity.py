"""Patch affinity, affinity-guided pooling and convex token mixing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, DimensionError, as_matrix, matmul

CLIP_MODES = ("relu", "none")


class ZeroNormPatchError(ValueError):
    """A patch embedding has zero norm, so its cosine similarity is undefined."""

    def __init__(self, index: int):
        super().__init__(f"patch {index} has a zero-norm embedding")
        self.index = index


@dataclass(frozen=True)
class PatchEmbeddings:
    """Row-major grid of patch features (``grid_h * grid_w`` rows)."""

    grid_h: int
    grid_w: int
    features: np.ndarray
    source_layer_offset: int = 0

    def __post_init__(self):
        feats = as_matrix(self.features, "features")
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError(f"grid must be positive, got {self.grid_h}x{self.grid_w}")
        if feats.shape[0] != self.grid_h * self.grid_w:
            raise DimensionError(
                f"{feats.shape[0]} patch rows do not fill a {self.grid_h}x{self.grid_w} grid"
            )
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class AffinityMap:
    values: np.ndarray
    grid_h: int
    grid_w: int

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_values(cls, values, grid_h: int | None = None, grid_w: int | None = None) -> AffinityMap:
        """Wrap a precomputed matrix after checking the affinity invariants."""
        v = as_matrix(values, "affinity")
        n = v.shape[0]
        if v.shape != (n, n):
            raise DimensionError(f"affinity must be square, got {v.shape}")
        if grid_h is None or grid_w is None:
            grid_h, grid_w = 1, n
        if grid_h * grid_w != n:
            raise DimensionError(f"grid {grid_h}x{grid_w} does not hold {n} patches")
        if np.abs(v - v.T).max() > 1e-6:
            raise ValueError("affinity must be symmetric")
        if np.abs(np.diag(v) - 1.0).max() > 1e-6:
            raise ValueError("affinity diagonal must be 1")
        if np.abs(v).max() > 1.0 + 1e-6:
            raise ValueError("affinity entries must lie in [-1, 1]")
        return cls(v, grid_h, grid_w)


@dataclass(frozen=True)
class PoolingWeights:
    values: np.ndarray
    # rows whose only nonzero weight is on the diagonal; pooling leaves them unchanged
    isolated: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def check_lambda(lam) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing coefficient must lie in [0, 1], got {lam}")
    return lam


def compute_affinity(patches: PatchEmbeddings) -> AffinityMap:
    """Cosine similarity between every pair of patches.

    Accumulates in float64 before rounding to float32 so identical patches
    score exactly 1, then symmetrizes with ``(A + A.T) / 2``.
    """
    f = patches.features.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", f, f))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormPatchError(int(zero[0]))
    u = f / norms[:, None]
    a = u @ u.T
    a = (a + a.T) / 2.0
    np.clip(a, -1.0, 1.0, out=a)
    return AffinityMap(a.astype(DTYPE), patches.grid_h, patches.grid_w)


def pooling_weights(a: AffinityMap, clip: str = "relu") -> PoolingWeights:
    """Row-normalized affinities; ``clip="relu"`` zeroes negative entries first."""
    if clip not in CLIP_MODES:
        raise ValueError(f"clip must be one of {CLIP_MODES}, got {clip!r}")
    v = a.values
    if clip == "relu":
        v = np.maximum(v, DTYPE(0.0))
    sums = v.sum(axis=1, keepdims=True, dtype=DTYPE)
    if (sums <= 0).any():
        row = int(np.flatnonzero(sums.ravel() <= 0)[0])
        raise ValueError(f"row {row} of the affinity has a non-positive sum; cannot normalize")
    w = v / sums
    off_diag = w.copy()
    np.fill_diagonal(off_diag, 0.0)
    isolated = ~off_diag.any(axis=1) & (np.diag(w) == 1.0)
    return PoolingWeights(w, isolated)


def pool_tokens(w: PoolingWeights, v) -> np.ndarray:
    v = as_matrix(v, "tokens")
    if v.shape[0] != w.n:
        raise DimensionError(f"{v.shape[0]} tokens but pooling weights are {w.n}x{w.n}")
    return matmul(w.values, v)


def mix_tokens(v, v_pooled, lam) -> np.ndarray:
    """Convex blend ``(1 - lam) * v + lam * v_pooled`` in float32."""
    lam = check_lambda(lam)
    v = as_matrix(v, "tokens")
    v_pooled = as_matrix(v_pooled, "pooled tokens")
    if v.shape != v_pooled.shape:
        raise DimensionError(f"cannot mix {v.shape} with {v_pooled.shape}")
    return _blend(v, v_pooled, lam)


def _blend(v: np.ndarray, v_pooled: np.ndarray, lam: float) -> np.ndarray:
    lam32 = DTYPE(lam)
    return (DTYPE(1.0) - lam32) * v + lam32 * v_pooled


def apply_weights(v, w: PoolingWeights, lam) -> np.ndarray:
    """Pool and mix ``v`` with precomputed weights.

    Isolated rows are copied through untouched, since a convex blend of a
    token with itself is that token.
    """
    lam = check_lambda(lam)
    v = as_matrix(v, "tokens")
    if v.shape[0] != w.n:
        raise DimensionError(f"{v.shape[0]} tokens but pooling weights are {w.n}x{w.n}")
    out = w.values @ v
    # same rounding as _blend, but reuses the pooled buffer
    lam32 = DTYPE(lam)
    out *= lam32
    out += (DTYPE(1.0) - lam32) * v
    if w.isolated.any():
        out[w.isolated] = v[w.isolated]
    return out


def apply_ivra_to_tokens(v, a: AffinityMap, lam, clip: str = "relu") -> np.ndarray:
    v = as_matrix(v, "tokens")
    if v.shape[0] != a.n:
        raise DimensionError(f"{v.shape[0]} tokens but affinity covers {a.n} patches")
    return apply_weights(v, pooling_weights(a, clip), lam)
