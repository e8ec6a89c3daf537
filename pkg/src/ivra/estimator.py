"""scikit-learn compatible wrapper around affinity pooling.

``fit`` takes the patch embeddings the affinity is computed from; ``transform``
pools and mixes any token block with one row per patch. ``fit_transform``
therefore refines the embeddings with their own affinity.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .affinity import (
    CLIP_MODES,
    AffinityMap,
    PatchEmbeddings,
    apply_weights,
    check_lambda,
    compute_affinity,
    pooling_weights,
)
from .tensor import DimensionError, as_matrix


class AffinityPooling(TransformerMixin, BaseEstimator):
    """Training-free affinity-guided token pooling.

    Parameters
    ----------
    lam : float, default=0.3
        Weight of the pooled tokens in the convex blend.
    clip : {"relu", "none"}, default="relu"
        Whether negative affinities are zeroed before row normalization.
    grid_shape : tuple of int, optional
        ``(grid_h, grid_w)`` of the patch grid; defaults to a single row.

    Attributes
    ----------
    affinity_ : AffinityMap
    weights_ : PoolingWeights
    n_patches_ : int
    """

    def __init__(self, lam=0.3, clip="relu", grid_shape=None):
        self.lam = lam
        self.clip = clip
        self.grid_shape = grid_shape

    def _check_params(self):
        check_lambda(self.lam)
        if self.clip not in CLIP_MODES:
            raise ValueError(f"clip must be one of {CLIP_MODES}, got {self.clip!r}")

    def fit(self, X, y=None):
        self._check_params()
        X = as_matrix(X, "X")
        n = X.shape[0]
        gh, gw = self.grid_shape if self.grid_shape is not None else (1, n)
        self.affinity_ = compute_affinity(PatchEmbeddings(gh, gw, X))
        self.weights_ = pooling_weights(self.affinity_, self.clip)
        self.n_patches_ = n
        self.n_features_in_ = X.shape[1]
        return self

    def fit_affinity(self, affinity: AffinityMap):
        """Use a precomputed affinity map instead of embeddings."""
        self._check_params()
        self.affinity_ = affinity
        self.weights_ = pooling_weights(affinity, self.clip)
        self.n_patches_ = affinity.n
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = as_matrix(X, "X")
        if X.shape[0] != self.n_patches_:
            raise DimensionError(f"fitted on {self.n_patches_} patches, got {X.shape[0]} tokens")
        return apply_weights(X, self.weights_, self.lam)

    def affinity_matrix(self) -> np.ndarray:
        check_is_fitted(self, "affinity_")
        return self.affinity_.values
