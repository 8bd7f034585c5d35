"""21-joint hand trajectories and hand-presence segmentation.

Joint order follows the usual MANO keypoint layout: wrist first, then four
joints per finger from the palm outwards (thumb: cmc, mcp, ip, tip; other
fingers: mcp, pip, dip, tip).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingAssetError, MissingJointsError, MissingPoseError, SchemaError, ValidationError
from .stabilization import FramePoses

JOINT_NAMES = (
    "wrist",
    "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip",
    "index_mcp", "index_pip", "index_dip", "index_tip",
    "middle_mcp", "middle_pip", "middle_dip", "middle_tip",
    "ring_mcp", "ring_pip", "ring_dip", "ring_tip",
    "pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip",
)
N_JOINTS = len(JOINT_NAMES)

# the thumb has no dip joint; its interphalangeal joint plays that role
JOINT_ALIASES = {"thumb_dip": "thumb_ip"}


def joint_index(name: str) -> int:
    return JOINT_NAMES.index(JOINT_ALIASES.get(name, name))


@dataclass(eq=False)
class HandJointFrame:
    """Joint positions of one frame.

    Raw detector output carries all 21 joints.  Generated trajectories carry a
    named subset, in which case ``names`` lists the joints row by row.
    """

    frame_id: int
    joints: np.ndarray
    names: tuple = JOINT_NAMES

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1, 3)
        self.names = tuple(self.names)
        if len(self.joints) != len(self.names):
            raise ValidationError(f"{len(self.joints)} joints for {len(self.names)} names")
        if not np.all(np.isfinite(self.joints)):
            raise ValidationError(f"frame {self.frame_id}: joints must be finite")

    def __getitem__(self, name: str) -> np.ndarray:
        for key in (name, JOINT_ALIASES.get(name)):
            if key in self.names:
                return self.joints[self.names.index(key)]
        raise MissingJointsError(f"frame {self.frame_id} has no joint {name!r}")

    def has(self, *names) -> bool:
        return all(n in self.names or JOINT_ALIASES.get(n) in self.names for n in names)

    @property
    def index_tip(self):
        return self["index_tip"]

    @property
    def thumb_tip(self):
        return self["thumb_tip"]

    @property
    def index_mcp(self):
        return self["index_mcp"]

    @property
    def thumb_dip(self):
        return self["thumb_dip"]

    @property
    def index_pip(self):
        return self["index_pip"]

    @property
    def index_dip(self):
        return self["index_dip"]

    @property
    def middle_tip(self):
        return self["middle_tip"]

    @property
    def middle_pip(self):
        return self["middle_pip"]

    @property
    def middle_mcp(self):
        return self["middle_mcp"]

    @property
    def middle_dip(self):
        return self["middle_dip"]


@dataclass(eq=False)
class HandTrajectory:
    clip_id: object
    frames: list

    def __post_init__(self):
        if not self.frames:
            raise ValidationError("a hand trajectory needs at least one frame")
        ids = [f.frame_id for f in self.frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValidationError("frame ids must be strictly increasing")
        names = self.frames[0].names
        if any(f.names != names for f in self.frames):
            raise ValidationError("all frames must carry the same joints")

    def __len__(self):
        return len(self.frames)

    @property
    def names(self) -> tuple:
        return self.frames[0].names

    @property
    def frame_ids(self) -> list:
        return [f.frame_id for f in self.frames]

    def positions(self) -> np.ndarray:
        """Joint array of shape ``(T, J, 3)``."""
        return np.stack([f.joints for f in self.frames])

    @classmethod
    def from_array(cls, positions, names=JOINT_NAMES, frame_ids=None, clip_id=None) -> "HandTrajectory":
        positions = np.asarray(positions, dtype=float)
        if frame_ids is None:
            frame_ids = range(len(positions))
        return cls(clip_id, [HandJointFrame(int(t), p, names) for t, p in zip(frame_ids, positions)])

    def map_points(self, fn) -> "HandTrajectory":
        """Apply ``fn`` to every ``(J, 3)`` joint block."""
        return HandTrajectory(self.clip_id, [HandJointFrame(f.frame_id, fn(f.joints), f.names)
                                             for f in self.frames])


@dataclass(eq=False)
class PresenceTimeline:
    present: np.ndarray

    def __post_init__(self):
        self.present = np.asarray(self.present, dtype=bool).reshape(-1)

    def __len__(self):
        return len(self.present)


def filter_hand_frames(timeline, min_gap: int = 1) -> list:
    """Inclusive ``[start, end]`` frame intervals where a hand is present.

    Runs separated by fewer than ``min_gap`` absent frames are merged.
    """
    present = timeline.present if isinstance(timeline, PresenceTimeline) else np.asarray(timeline, dtype=bool)
    runs = []
    start = None
    for i, p in enumerate(present):
        if p and start is None:
            start = i
        elif not p and start is not None:
            runs.append([start, i - 1])
            start = None
    if start is not None:
        runs.append([start, len(present) - 1])

    merged = []
    for run in runs:
        if merged and run[0] - merged[-1][1] - 1 < min_gap:
            merged[-1][1] = run[1]
        else:
            merged.append(run)
    return merged


def build_hand_trajectory(frame_ids: Sequence[int], raw_joints: dict, poses: FramePoses,
                          clip_id=None) -> HandTrajectory:
    """Re-express camera-frame joints of each clip frame in the clip's first-frame coordinates."""
    frames = []
    for fid in frame_ids:
        if fid not in raw_joints:
            raise MissingJointsError(f"clip frame {fid} has no hand joints")
        if fid not in poses:
            raise MissingPoseError(f"clip frame {fid} has no camera pose")
        raw = raw_joints[fid]
        frames.append(HandJointFrame(fid, poses[fid].apply(raw.joints), raw.names))
    return HandTrajectory(clip_id, frames)


def resample_trajectory(traj: HandTrajectory, target_length: int) -> HandTrajectory:
    """Piecewise-linear resampling at uniformly spaced trajectory parameters."""
    if target_length < 2:
        raise ValidationError("target_length must be at least 2")
    if len(traj) == target_length:
        return HandTrajectory(traj.clip_id, list(traj.frames))
    P = traj.positions()
    T = len(P)
    if T == 1:
        out = np.repeat(P, target_length, axis=0)
    else:
        s = np.linspace(0.0, T - 1, target_length)
        lo = np.minimum(np.floor(s).astype(int), T - 2)
        w = (s - lo)[:, None, None]
        out = (1.0 - w) * P[lo] + w * P[lo + 1]
        out[0], out[-1] = P[0], P[-1]
    return HandTrajectory.from_array(out, traj.names, clip_id=traj.clip_id)


def read_hand_file(path) -> tuple[dict, dict]:
    """Load ``{"frames": [{t, present, joints, confidence}]}``.

    Returns ``(joints_by_frame, presence_by_frame)``.  When a frame has several
    detections the most confident one is kept.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(path)
    try:
        doc = json.loads(path.read_text())
        joints, confidence, presence = {}, {}, {}
        for entry in doc["frames"]:
            t = int(entry["t"])
            present = bool(entry.get("present", True))
            presence[t] = presence.get(t, False) or present
            if not present or entry.get("joints") is None:
                continue
            conf = float(entry.get("confidence", 1.0))
            if t in joints and confidence[t] >= conf:
                continue
            arr = np.asarray(entry["joints"], dtype=float)
            if arr.shape != (N_JOINTS, 3):
                raise ValueError(f"frame {t}: expected 21 joints, got shape {arr.shape}")
            joints[t] = HandJointFrame(t, arr)
            confidence[t] = conf
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed hand file ({exc})") from exc
    return joints, presence


def write_hand_file(path, joints: dict, presence: dict | None = None, confidence=1.0) -> None:
    frames = []
    ids = sorted(set(joints) | set(presence or {}))
    for t in ids:
        if t in joints:
            frames.append({"t": int(t), "present": True, "joints": joints[t].joints.tolist(),
                           "confidence": confidence})
        else:
            frames.append({"t": int(t), "present": False, "joints": None, "confidence": 0.0})
    Path(path).write_text(json.dumps({"frames": frames}))
