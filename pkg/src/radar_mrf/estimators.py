"""Scikit-learn-style adapter for the density feature extractor.

The transformer maps an (N, C) point array to an (N, B) matrix of
normalized densities, one column per bandwidth, so the feature can slot
into sklearn pipelines next to other per-point features.  It is
stateless apart from remembering the fitted column layout; ``fit`` only
validates and records the schema.

The pillar/voxel/assignment stages reshape rather than transform
row-aligned features, so they stay plain functions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cloud import FeatureSchema, PointCloud
from .kde import KdeConfig, kde_multiband


class KdeDensityTransformer(TransformerMixin, BaseEstimator):
    """Per-point multi-bandwidth density features.

    Parameters
    ----------
    bandwidths : tuple of float
        Kernel scales; one output column per entry.
    kernel_dims : tuple of str
        Field names entering the kernel; must include x, y, z.
    epsilon : float
        Variance guard of the z-score normalization.
    exclude_self : bool
        Whether a point contributes to its own density.
    field_names : tuple of str or None
        Names for the input columns; ``None`` uses x, y, z followed by
        f3, f4, ...
    """

    def __init__(self, bandwidths=(1.5, 2.0), kernel_dims=("x", "y", "z"),
                 epsilon=1e-5, exclude_self=True, field_names=None):
        self.bandwidths = bandwidths
        self.kernel_dims = kernel_dims
        self.epsilon = epsilon
        self.exclude_self = exclude_self
        self.field_names = field_names

    def _schema_for(self, n_cols: int) -> FeatureSchema:
        if self.field_names is not None:
            names = tuple(self.field_names)
            if len(names) != n_cols:
                raise ValueError(f"field_names has {len(names)} entries for "
                                 f"{n_cols} columns")
        else:
            if n_cols < 3:
                raise ValueError("need at least the 3 spatial columns")
            names = ("x", "y", "z") + tuple(f"f{i}" for i in range(3, n_cols))
        return FeatureSchema.from_names(names)

    def _configs(self) -> list[KdeConfig]:
        if not self.bandwidths:
            raise ValueError("bandwidths must not be empty")
        return [KdeConfig(radius=float(r),
                          kernel_dims=tuple(self.kernel_dims),
                          epsilon=float(self.epsilon),
                          exclude_self=bool(self.exclude_self))
                for r in self.bandwidths]

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=3, ensure_2d=True,
                        dtype=np.float64, ensure_all_finite=True)
        self._configs()
        self.schema_ = self._schema_for(X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "schema_")
        X = check_array(X, ensure_min_features=3, ensure_2d=True,
                        dtype=np.float64, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but "
                             f"{type(self).__name__} was fitted with "
                             f"{self.n_features_in_}")
        pc = PointCloud(schema=self.schema_, values=X)
        return kde_multiband(pc, self._configs()).normalized

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "schema_")
        return np.asarray([f"density_r{float(r):g}" for r in self.bandwidths],
                          dtype=object)
