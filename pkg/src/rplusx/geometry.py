"""Pinhole camera model and rigid registration.

Points are plain ``numpy`` arrays: a single point has shape ``(3,)`` and a
point list has shape ``(n, 3)``, in meters.  Depth maps are ``(height, width)``
float arrays in meters where ``0`` marks an invalid reading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfigurationError,
    InvalidDepthError,
    LengthMismatchError,
    NoConsensusError,
    NonPositiveDepthError,
    OutOfBoundsError,
    ValidationError,
)

ORTHONORMAL_TOL = 1e-9

# relative singular-value floor below which centered points count as rank deficient
_RANK_RTOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if int(self.width) != self.width or int(self.height) != self.height or self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image size must be positive integers, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(f"principal point ({self.cx}, {self.cy}) outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, u, v) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValidationError("rotation must be 3x3 and translation length 3")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValidationError("rigid transform has non-finite entries")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHONORMAL_TOL or abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise ValidationError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        return P @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: ``(self @ other).apply(x) == self.apply(other.apply(x))``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def as_points(points, name="points") -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1 and P.shape == (3,):
        P = P[None, :]
    if P.ndim != 2 or P.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (n, 3), got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValidationError(f"{name} contains non-finite values")
    return P


def rotation_about_axis(axis, angle) -> np.ndarray:
    """Rodrigues rotation matrix."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation_angle(R) -> float:
    """Rotation angle of ``R`` in radians, accurate near zero."""
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def unproject(pixel, depth, intrinsics: CameraIntrinsics) -> np.ndarray:
    u, v = float(pixel[0]), float(pixel[1])
    if not intrinsics.contains(u, v):
        raise OutOfBoundsError(f"pixel ({u}, {v}) outside {intrinsics.width}x{intrinsics.height} image")
    d = float(depth)
    if not np.isfinite(d) or d <= 0:
        raise InvalidDepthError(f"invalid depth {d} at pixel ({u}, {v})")
    return np.array([(u - intrinsics.cx) / intrinsics.fx * d,
                     (v - intrinsics.cy) / intrinsics.fy * d,
                     d])


def project(point, intrinsics: CameraIntrinsics) -> np.ndarray:
    x, y, z = (float(c) for c in np.asarray(point, dtype=float).reshape(3))
    if not z > 0:
        raise NonPositiveDepthError(f"cannot project point with z={z}")
    return np.array([intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy])


def project_many(points, intrinsics: CameraIntrinsics) -> np.ndarray:
    P = as_points(points)
    if np.any(P[:, 2] <= 0):
        raise NonPositiveDepthError("cannot project points with z <= 0")
    return np.column_stack([intrinsics.fx * P[:, 0] / P[:, 2] + intrinsics.cx,
                            intrinsics.fy * P[:, 1] / P[:, 2] + intrinsics.cy])


def unproject_many(pixels, depths, intrinsics: CameraIntrinsics) -> np.ndarray:
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    d = np.asarray(depths, dtype=float).reshape(-1)
    u, v = px[:, 0], px[:, 1]
    inside = (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
    if not np.all(inside):
        raise OutOfBoundsError(f"pixels {np.flatnonzero(~inside).tolist()} outside the image")
    if not np.all(np.isfinite(d) & (d > 0)):
        raise InvalidDepthError(f"invalid depth at pixels {np.flatnonzero(~(d > 0)).tolist()}")
    return np.column_stack([(u - intrinsics.cx) / intrinsics.fx * d,
                            (v - intrinsics.cy) / intrinsics.fy * d,
                            d])


def check_depth_map(depth) -> np.ndarray:
    D = np.asarray(depth, dtype=float)
    if D.ndim != 2:
        raise ValidationError(f"depth map must be 2-D, got shape {D.shape}")
    if not np.all(np.isfinite(D)) or np.any(D < 0):
        raise ValidationError("depth map values must be finite and non-negative")
    return D


def transform_points(T: RigidTransform, points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return P.reshape(0, 3)
    return T.apply(P)


def centered_rank(points) -> int:
    """Numerical rank of a point set after removing its centroid."""
    P = np.asarray(points, dtype=float)
    s = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > _RANK_RTOL * s[0]))


def estimate_rigid_transform(source, target) -> RigidTransform:
    """Least-squares rigid transform mapping ``source`` onto ``target`` (Kabsch).

    Reflections are removed by flipping the sign of the singular vector with the
    smallest singular value, so the result is always a proper rotation.
    """
    S = as_points(source, "source")
    D = as_points(target, "target")
    if S.shape != D.shape:
        raise LengthMismatchError(f"source has {len(S)} points, target has {len(D)}")
    if len(S) < 3:
        raise DegenerateConfigurationError(f"need at least 3 correspondences, got {len(S)}")
    if centered_rank(S) < 2:
        raise DegenerateConfigurationError("source points are collinear or coincident")

    cs = S.mean(axis=0)
    cd = D.mean(axis=0)
    H = (S - cs).T @ (D - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cd - R @ cs)


def alignment_rms(T: RigidTransform, source, target) -> float:
    r = T.apply(as_points(source)) - as_points(target)
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


def robust_rigid_transform(source, target, inlier_threshold=0.01, max_iterations=500, seed=0):
    """RANSAC over minimal 3-point samples followed by a Kabsch refit on the inliers.

    Returns ``(transform, inlier_mask)``.  A correspondence is an inlier when
    its residual is strictly below ``inlier_threshold``.
    """
    S = as_points(source, "source")
    D = as_points(target, "target")
    if S.shape != D.shape:
        raise LengthMismatchError(f"source has {len(S)} points, target has {len(D)}")
    n = len(S)
    if n < 3:
        raise NoConsensusError(f"need at least 3 correspondences, got {n}")

    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = 0
    best_cost = np.inf

    def residuals(T):
        r = T.apply(S) - D
        return np.sqrt(np.sum(r * r, axis=1))

    for _ in range(max_iterations):
        idx = rng.choice(n, size=3, replace=False)
        try:
            T = estimate_rigid_transform(S[idx], D[idx])
        except DegenerateConfigurationError:
            continue
        res = residuals(T)
        mask = res < inlier_threshold
        count = int(mask.sum())
        cost = float(res[mask].sum())
        if count > best_count or (count == best_count and count > 0 and cost < best_cost):
            best_mask, best_count, best_cost = mask, count, cost
            if count == n:
                break

    if best_mask is None or best_count < 3:
        raise NoConsensusError(f"best consensus has {best_count} inliers, need 3")

    mask = best_mask
    T = estimate_rigid_transform(S[mask], D[mask])
    for _ in range(10):
        new_mask = residuals(T) < inlier_threshold
        if new_mask.sum() < 3 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
        T = estimate_rigid_transform(S[mask], D[mask])
    return T, mask.copy()
