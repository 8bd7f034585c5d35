import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rplusx.errors import MissingJointsError, MissingPoseError, SchemaError, ValidationError
from rplusx.geometry import RigidTransform
from rplusx.hands import (
    JOINT_NAMES,
    HandJointFrame,
    HandTrajectory,
    PresenceTimeline,
    build_hand_trajectory,
    filter_hand_frames,
    joint_index,
    read_hand_file,
    resample_trajectory,
    write_hand_file,
)
from rplusx.stabilization import FramePoses
from rplusx.synthetic import random_transform


def test_joint_layout():
    assert len(JOINT_NAMES) == 21 and JOINT_NAMES[0] == "wrist"
    assert joint_index("thumb_tip") == 4 and joint_index("index_tip") == 8
    assert joint_index("thumb_dip") == joint_index("thumb_ip") == 3
    f = HandJointFrame(0, np.arange(63.0).reshape(21, 3))
    assert np.array_equal(f.thumb_dip, f["thumb_ip"])
    assert f.has("index_tip", "thumb_dip") and not f.has("push_tip")
    with pytest.raises(MissingJointsError):
        f["push_tip"]


def test_frame_validation():
    with pytest.raises(ValidationError):
        HandJointFrame(0, np.zeros((20, 3)))
    with pytest.raises(ValidationError):
        HandJointFrame(0, np.full((21, 3), np.inf))
    f = HandJointFrame(0, np.zeros((21, 3)))
    with pytest.raises(ValidationError):
        HandTrajectory(None, [f, f])


def test_filter_examples():
    present = [True, True, True, False, False, True, True]
    assert filter_hand_frames(present, 3) == [[0, 6]]
    assert filter_hand_frames(present, 2) == [[0, 2], [5, 6]]
    assert filter_hand_frames([False, True, False, True], 1) == [[1, 1], [3, 3]]
    assert filter_hand_frames([False, True, False, True], 2) == [[1, 3]]
    assert filter_hand_frames([False] * 3) == []
    assert filter_hand_frames(PresenceTimeline([True, True])) == [[0, 1]]


@given(st.lists(st.booleans(), max_size=40), st.integers(0, 5))
def test_filter_invariants(present, min_gap):
    intervals = filter_hand_frames(present, min_gap)
    covered = {i for a, b in intervals for i in range(a, b + 1)}
    assert {i for i, p in enumerate(present) if p} <= covered
    for a, b in intervals:
        assert present[a] and present[b]
    for (a0, b0), (a1, b1) in zip(intervals, intervals[1:]):
        assert a1 - b0 - 1 >= max(min_gap, 1)
    if min_gap <= 1:
        assert covered == {i for i, p in enumerate(present) if p}


def test_build_trajectory_reexpresses_joints():
    rng = np.random.default_rng(0)
    poses = FramePoses({3: RigidTransform.identity(), 4: random_transform(rng)})
    raw = {t: HandJointFrame(t, rng.normal(size=(21, 3))) for t in (3, 4)}
    traj = build_hand_trajectory([3, 4], raw, poses, clip_id="c")
    assert traj.frame_ids == [3, 4] and traj.clip_id == "c"
    assert np.allclose(traj.frames[1].joints, poses[4].apply(raw[4].joints))
    with pytest.raises(MissingJointsError):
        build_hand_trajectory([3, 5], raw, poses)
    raw[5] = raw[4]
    with pytest.raises(MissingPoseError):
        build_hand_trajectory([3, 5], raw, poses)


@given(st.integers(1, 12), st.integers(2, 30))
def test_resample(length, target):
    rng = np.random.default_rng(length)
    traj = HandTrajectory.from_array(rng.normal(size=(length, 4, 3)), JOINT_NAMES[:4])
    out = resample_trajectory(traj, target)
    P, Q = traj.positions(), out.positions()
    assert len(out) == target and out.names == traj.names
    assert np.array_equal(Q[0], P[0]) and np.array_equal(Q[-1], P[-1])
    assert out.frame_ids == list(range(target))


def test_resample_linear():
    traj = HandTrajectory.from_array(np.array([[[0.0, 0, 0]], [[2.0, 0, 0]]]), ("wrist",))
    assert resample_trajectory(traj, 5).positions()[:, 0, 0].tolist() == [0, 0.5, 1.0, 1.5, 2.0]
    with pytest.raises(ValidationError):
        resample_trajectory(traj, 1)


def test_hand_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    joints = {0: HandJointFrame(0, rng.normal(size=(21, 3))), 2: HandJointFrame(2, rng.normal(size=(21, 3)))}
    write_hand_file(tmp_path / "h.json", joints, {0: True, 1: False, 2: True})
    j, p = read_hand_file(tmp_path / "h.json")
    assert sorted(j) == [0, 2] and p == {0: True, 1: False, 2: True}
    assert np.array_equal(j[2].joints, joints[2].joints)


def test_hand_file_keeps_most_confident(tmp_path):
    a, b = np.zeros((21, 3)), np.ones((21, 3))
    doc = ('{"frames": [{"t": 0, "joints": %s, "confidence": 0.4},'
           '{"t": 0, "joints": %s, "confidence": 0.9}]}') % (a.tolist(), b.tolist())
    (tmp_path / "h.json").write_text(doc)
    j, _ = read_hand_file(tmp_path / "h.json")
    assert np.array_equal(j[0].joints, b)
    (tmp_path / "bad.json").write_text('{"frames": [{"t": 0, "joints": [[1, 2, 3]]}]}')
    with pytest.raises(SchemaError):
        read_hand_file(tmp_path / "bad.json")
