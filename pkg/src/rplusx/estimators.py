"""scikit-learn style wrappers around the registration and warping routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .context import ContextExample, rank_examples
from .descriptors import KeypointSet
from .errors import LengthMismatchError
from .geometry import RigidTransform, alignment_rms, estimate_rigid_transform, robust_rigid_transform


def check_points(X, name="X", min_points=1) -> np.ndarray:
    """Validate an ``(n, 3)`` finite float point array."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_points, input_name=name)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns, got {X.shape[1]}")
    return X


class RigidRegistration(TransformerMixin, BaseEstimator):
    """Rigid transform from ``X`` (source points) onto ``y`` (target points).

    With ``inlier_threshold=None`` a plain least-squares fit is used; otherwise
    RANSAC with that threshold followed by a refit on the inliers.

    After ``fit``: ``rotation_``, ``translation_``, ``inlier_mask_``, ``rms_``.
    """

    def __init__(self, inlier_threshold=None, max_iterations=500, random_state=0):
        self.inlier_threshold = inlier_threshold
        self.max_iterations = max_iterations
        self.random_state = random_state

    def fit(self, X, y):
        X = check_points(X, "X", 3)
        y = check_points(y, "y", 3)
        if X.shape != y.shape:
            raise LengthMismatchError(f"X has {len(X)} points, y has {len(y)}")
        if self.inlier_threshold is None:
            T = estimate_rigid_transform(X, y)
            mask = np.ones(len(X), dtype=bool)
        else:
            T, mask = robust_rigid_transform(X, y, self.inlier_threshold, self.max_iterations,
                                             self.random_state)
        self.transform_ = T
        self.rotation_ = T.rotation
        self.translation_ = T.translation
        self.inlier_mask_ = mask
        self.rms_ = alignment_rms(T, X[mask], y[mask])
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return self.transform_.apply(check_points(X))

    def inverse_transform(self, X):
        check_is_fitted(self, "transform_")
        return self.transform_.inverse().apply(check_points(X))

    def score(self, X, y):
        """Negative RMS alignment error."""
        check_is_fitted(self, "transform_")
        return -alignment_rms(self.transform_, check_points(X), check_points(y))


class NearestContextWarp(RegressorMixin, BaseEstimator):
    """Keypoints-to-trajectory predictor by rigid transport of the closest example.

    ``fit`` takes a list of :class:`ContextExample`; ``predict`` takes live
    keypoints (``KeypointSet`` or ``(K, 3)`` array) and returns the warped
    ``(T, J, 3)`` joint array.
    """

    def fit(self, X, y=None):
        examples = list(X)
        if y is not None:
            examples = [ContextExample(k if isinstance(k, KeypointSet) else KeypointSet(k), t)
                        for k, t in zip(X, y)]
        if not examples:
            raise ValueError("need at least one example")
        self.examples_ = examples
        self.n_keypoints_ = len(examples[0].keypoints)
        return self

    def _live(self, live) -> KeypointSet:
        if isinstance(live, KeypointSet):
            return live
        return KeypointSet(check_points(live, "live", 3))

    def select(self, live):
        """``(index, transform, rms)`` of the example chosen for ``live``."""
        check_is_fitted(self, "examples_")
        best, transforms, rms = rank_examples(self.examples_, self._live(live))
        return best, transforms[best], float(rms[best])

    def predict(self, live) -> np.ndarray:
        best, T, _ = self.select(live)
        return T.apply(self.examples_[best].trajectory.positions())

    def score(self, X, y=None):
        """Negative mean keypoint alignment RMS over the live sets in ``X``."""
        return -float(np.mean([self.select(live)[2] for live in X]))


__all__ = ["NearestContextWarp", "RigidRegistration", "RigidTransform", "check_points"]
