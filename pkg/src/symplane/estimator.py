"""Scikit-learn style front-end for the symmetry plane detector."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .features import FeatureCloud
from .geometry import reflect_point
from .symmetry import DetectionConfig, detect

__all__ = ["SymmetryPlaneDetector"]


class SymmetryPlaneDetector(BaseEstimator):
    """Detects global reflective symmetry planes from featured point clouds.

    Expects X of shape (n_samples, 3 + n_feature_dims): the first three
    columns are point coordinates (centered at the origin), the rest the
    per-point feature vector. Without feature columns the coordinates
    themselves are used as features, which degrades matching to geometric
    nearest neighbors.

    Parameters mirror the detection thresholds: `tau1` (Chamfer acceptance,
    on diagonal-normalized squared distances), `tau2_deg` (angular dedup),
    `k` (max planes), `origin_frac` (candidate distance-to-origin cut).
    `diagonal` overrides the scale reference; by default the bounding-box
    diagonal of the fitted points is used.
    """

    def __init__(
        self,
        tau1: float = 0.01,
        tau2_deg: float = 1.0,
        k: int = 10,
        origin_frac: float = 0.05,
        diagonal: float | None = None,
        workers: int = 1,
    ):
        self.tau1 = tau1
        self.tau2_deg = tau2_deg
        self.k = k
        self.origin_frac = origin_frac
        self.diagonal = diagonal
        self.workers = workers

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_features=3)
        points = X[:, :3]
        features = X[:, 3:] if X.shape[1] > 3 else points
        diagonal = self.diagonal
        if diagonal is None:
            diagonal = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
        cfg = DetectionConfig(
            origin_tol_frac=self.origin_frac,
            chamfer_tau1=self.tau1,
            angle_tau2_deg=self.tau2_deg,
            max_planes=self.k,
        )
        cloud = FeatureCloud(points, features)
        self.planes_ = detect(cloud, diagonal, cfg, workers=self.workers)
        self.normals_ = (
            np.stack([c.plane.normal for c in self.planes_])
            if self.planes_
            else np.zeros((0, 3))
        )
        self.offsets_ = np.array([c.plane.offset for c in self.planes_])
        self.chamfers_ = np.array([c.chamfer for c in self.planes_])
        self.confidences_ = np.array([c.confidence for c in self.planes_])
        self.diagonal_ = diagonal
        return self

    def transform(self, X):
        """Reflect point coordinates across the best detected plane.

        Identity when no plane was found. Feature columns pass through.
        """
        check_is_fitted(self, "planes_")
        X = check_array(X, dtype=np.float64, ensure_min_features=3)
        if not self.planes_:
            return X
        out = X.copy()
        out[:, :3] = reflect_point(X[:, :3], self.planes_[0].plane)
        return out

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)
