import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from rplusx.errors import (
    DegenerateConfigurationError,
    InvalidDepthError,
    LengthMismatchError,
    NoConsensusError,
    NonPositiveDepthError,
    OutOfBoundsError,
    ValidationError,
)
from rplusx.geometry import (
    CameraIntrinsics,
    RigidTransform,
    alignment_rms,
    estimate_rigid_transform,
    project,
    project_many,
    robust_rigid_transform,
    rotation_about_axis,
    rotation_angle,
    unproject,
    unproject_many,
)
from rplusx.synthetic import random_transform

seeds = st.integers(0, 2**32 - 1)


def test_intrinsics_validation():
    with pytest.raises(ValidationError):
        CameraIntrinsics(0, 1, 1, 1, 4, 4)
    with pytest.raises(ValidationError):
        CameraIntrinsics(1, 1, 5, 1, 4, 4)
    K = CameraIntrinsics(500, 400, 2, 1, 4, 4)
    assert K.matrix[0, 0] == 500 and K.matrix[1, 2] == 1
    assert CameraIntrinsics.from_dict(K.to_dict()) == K
    assert K.contains(0, 0) and K.contains(3.99, 3.99) and not K.contains(4, 0) and not K.contains(-0.1, 0)


def test_transform_rejects_reflection_and_skew():
    with pytest.raises(ValidationError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValidationError):
        RigidTransform(np.eye(3) * 1.01, np.zeros(3))
    with pytest.raises(ValidationError):
        RigidTransform(np.eye(3), [0, 0, np.nan])


def test_transform_is_immutable():
    T = RigidTransform.identity()
    with pytest.raises(ValueError):
        T.rotation[0, 0] = 2.0


@given(seeds)
def test_compose_and_inverse(seed):
    rng = np.random.default_rng(seed)
    A, B = random_transform(rng), random_transform(rng)
    x = rng.normal(size=(5, 3))
    assert np.allclose((A @ B).apply(x), A.apply(B.apply(x)), atol=1e-12)
    assert np.allclose(A.inverse().apply(A.apply(x)), x, atol=1e-12)
    assert np.allclose(RigidTransform.from_matrix(A.as_matrix()).apply(x), A.apply(x))


@given(seeds, st.floats(-np.pi, np.pi))
def test_rotation_helpers_match_scipy(seed, angle):
    axis = np.random.default_rng(seed).normal(size=3)
    R = rotation_about_axis(axis, angle)
    ref = Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()
    assert np.allclose(R, ref, atol=1e-12)
    assert rotation_angle(R) == pytest.approx(abs(angle), abs=1e-9)


@settings(max_examples=60)
@given(seeds, st.integers(3, 40))
def test_kabsch_recovers_exact_transform(seed, n):
    rng = np.random.default_rng(seed)
    T = random_transform(rng)
    S = rng.normal(size=(n, 3))
    est = estimate_rigid_transform(S, T.apply(S))
    assert rotation_angle(est.rotation @ T.rotation.T) < 1e-9
    assert np.abs(est.translation - T.translation).max() < 1e-9


@settings(max_examples=40)
@given(seeds)
def test_kabsch_never_reflects(seed):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(6, 3))
    mirrored = S * np.array([1.0, 1.0, -1.0])
    est = estimate_rigid_transform(S, mirrored)
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


@settings(max_examples=30)
@given(seeds)
def test_kabsch_is_least_squares(seed):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(8, 3))
    D = random_transform(rng).apply(S) + 0.05 * rng.normal(size=(8, 3))
    best = estimate_rigid_transform(S, D)
    base = alignment_rms(best, S, D)
    for _ in range(10):
        nudge = RigidTransform(rotation_about_axis(rng.normal(size=3), 1e-3), 1e-3 * rng.normal(size=3))
        assert alignment_rms(nudge @ best, S, D) >= base - 1e-12


def test_kabsch_degenerate_inputs():
    with pytest.raises(DegenerateConfigurationError):
        estimate_rigid_transform(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfigurationError):
        estimate_rigid_transform(line, line)
    with pytest.raises(LengthMismatchError):
        estimate_rigid_transform(np.eye(3), np.eye(4)[:, :3])


def test_robust_rejects_outliers():
    rng = np.random.default_rng(7)
    T = random_transform(rng)
    S = rng.uniform(-0.5, 0.5, size=(40, 3))
    D = T.apply(S)
    out = rng.choice(40, size=10, replace=False)
    D[out] += rng.normal(size=(10, 3)) * 0.2 + 0.05
    est, mask = robust_rigid_transform(S, D, 0.01, 500, seed=3)
    assert not mask[out].any() and mask.sum() == 30
    assert np.abs(est.as_matrix() - T.as_matrix()).max() < 1e-9


def test_robust_is_seeded():
    rng = np.random.default_rng(8)
    S = rng.normal(size=(20, 3))
    D = S + rng.normal(size=(20, 3)) * 0.003
    a = robust_rigid_transform(S, D, seed=5)
    b = robust_rigid_transform(S, D, seed=5)
    assert np.array_equal(a[0].as_matrix(), b[0].as_matrix()) and np.array_equal(a[1], b[1])


def test_robust_no_consensus():
    rng = np.random.default_rng(9)
    S = rng.normal(size=(12, 3))
    D = rng.normal(size=(12, 3)) * 10
    with pytest.raises(NoConsensusError):
        robust_rigid_transform(S, D, 1e-6, 50)
    with pytest.raises(NoConsensusError):
        robust_rigid_transform(S[:2], D[:2])


@given(st.floats(0, 639.999), st.floats(0, 479.999), st.floats(0.05, 20))
def test_projection_round_trip(u, v, d):
    K = CameraIntrinsics(600.0, 610.0, 320.0, 240.0, 640, 480)
    p = unproject((u, v), d, K)
    assert p[2] == d
    assert np.allclose(project(p, K), (u, v), atol=1e-9)


def test_projection_errors(intrinsics):
    with pytest.raises(OutOfBoundsError):
        unproject((640, 0), 1.0, intrinsics)
    with pytest.raises(InvalidDepthError):
        unproject((1, 1), 0.0, intrinsics)
    with pytest.raises(NonPositiveDepthError):
        project((0, 0, -1), intrinsics)
    with pytest.raises(NonPositiveDepthError):
        project_many([[0, 0, 1], [0, 0, 0]], intrinsics)
    with pytest.raises(InvalidDepthError):
        unproject_many([[1, 1]], [np.nan], intrinsics)
