import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rplusx.errors import InsufficientStaticAreaError, SchemaError, UnknownFrameError, UnstabilizableClipError
from rplusx.geometry import unproject_many
from rplusx.stabilization import (
    StaticMask,
    TrackSet,
    estimate_frame_poses,
    read_mask,
    read_tracks,
    reexpress_in_frame1,
    sample_static_points,
    write_mask,
    write_tracks,
)
from rplusx.synthetic import camera_rig


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_recovers_generating_poses(seed):
    rig = camera_rig(np.random.default_rng(seed), n_frames=6)
    poses = estimate_frame_poses(rig.tracks, rig.depths, rig.intrinsics, seed=seed % 1000)
    assert poses.flagged == []
    for f in rig.frame_ids:
        assert np.abs(poses[f].as_matrix() - rig.poses[f].as_matrix()).max() < 1e-6


def test_world_points_constant_across_frames():
    rig = camera_rig(np.random.default_rng(5), n_frames=6)
    poses = estimate_frame_poses(rig.tracks, rig.depths, rig.intrinsics)
    static = ~rig.dynamic
    first = None
    for i, f in enumerate(rig.frame_ids):
        d = rig.depths[f][0, 0]
        cam = unproject_many(rig.tracks.uv[i][static], np.full(static.sum(), d), rig.intrinsics)
        world = reexpress_in_frame1(poses, f, cam)
        first = world if first is None else first
        assert np.abs(world - first).max() < 1e-6


def test_dynamic_tracks_are_not_inliers():
    rig = camera_rig(np.random.default_rng(11), n_frames=5)
    n_static = int((~rig.dynamic).sum())
    poses = estimate_frame_poses(rig.tracks, rig.depths, rig.intrinsics)
    for f in rig.frame_ids[1:]:
        assert poses.inlier_counts[f] == n_static


def test_frame_without_consensus_inherits_previous_pose(caplog):
    rig = camera_rig(np.random.default_rng(2), n_frames=4, dynamic_fraction=0.0)
    rig.tracks.visible[2] = False
    poses = estimate_frame_poses(rig.tracks, rig.depths, rig.intrinsics)
    assert poses.flagged == [2]
    assert np.array_equal(poses[2].as_matrix(), poses[1].as_matrix())
    assert "inheriting" in caplog.text


def test_unstabilizable_first_frame():
    rig = camera_rig(np.random.default_rng(2), n_frames=3, dynamic_fraction=0.0)
    rig.tracks.visible[0, 2:] = False
    with pytest.raises(UnstabilizableClipError):
        estimate_frame_poses(rig.tracks, rig.depths, rig.intrinsics)


def test_unknown_frame():
    rig = camera_rig(np.random.default_rng(2), n_frames=3)
    poses = estimate_frame_poses(rig.tracks, rig.depths, rig.intrinsics)
    assert 2 in poses and 7 not in poses
    with pytest.raises(UnknownFrameError):
        poses[7]
    with pytest.raises(UnknownFrameError):
        rig.tracks.row(7)


def test_restrict_drops_tracks_invisible_in_first_frame():
    ts = TrackSet(["a", "b"], [0, 1, 2], np.zeros((3, 2, 2)), [[True, False], [True, True], [True, True]])
    sub = ts.restrict([1, 2])
    assert sub.track_ids == ["a", "b"] and sub.frame_ids == [1, 2]
    assert ts.restrict([0, 2]).track_ids == ["a"]


def test_track_file_round_trip(tmp_path):
    rig = camera_rig(np.random.default_rng(4), n_frames=3, first_frame=5)
    write_tracks(tmp_path / "t.json", rig.tracks)
    back = read_tracks(tmp_path / "t.json")
    assert back.frame_ids == [5, 6, 7] and back.track_ids == rig.tracks.track_ids
    assert np.array_equal(back.uv, rig.tracks.uv) and np.array_equal(back.visible, rig.tracks.visible)
    (tmp_path / "bad.json").write_text('{"tracks": [{"id": 1}]}')
    with pytest.raises(SchemaError):
        read_tracks(tmp_path / "bad.json")


def test_mask_round_trip_and_sampling(tmp_path):
    m = np.zeros((40, 50), dtype=bool)
    m[10:30, 5:45] = True
    write_mask(tmp_path / "m.png", StaticMask(0, m))
    mask = read_mask(tmp_path / "m.png", 3)
    assert mask.frame_id == 3 and np.array_equal(mask.mask, m)
    assert mask.contains(5, 10) and not mask.contains(4.4, 10) and not mask.contains(-1, 0)
    pts = sample_static_points(mask, 20, seed=1, min_separation=4.0)
    assert all(m[v, u] for u, v in pts)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(20) * 99
    assert d.min() >= 4.0
    assert np.array_equal(pts, sample_static_points(mask, 20, seed=1, min_separation=4.0))
    with pytest.raises(InsufficientStaticAreaError):
        sample_static_points(mask, 100, min_separation=10.0)
