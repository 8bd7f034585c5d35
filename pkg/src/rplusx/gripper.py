"""Hand-joint to parallel-gripper retargeting.

Gripper-local frame: +z points from the palm towards the fingertips and +x is
the finger opening direction.  Three heuristics are supported:

* grasp: finger tips on the index and thumb tips, palm base on the midpoint of
  index mcp and thumb dip; opening from the tip separation.
* press: closed gripper, contact line on the index finger (tip, dip, pip, mcp).
* push: as press, on the midpoints of the index and middle finger joints.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateConfigurationError,
    DegenerateHandError,
    MissingAssetError,
    MissingJointsError,
    SchemaError,
    ValidationError,
)
from .geometry import RigidTransform, alignment_rms, centered_rank, estimate_rigid_transform
from .hands import HandJointFrame, HandTrajectory

CLOSE_THRESHOLD = 0.5
CLOSE_SUSTAIN = 2
_MIN_TIP_SEPARATION = 1e-6


class Heuristic(str, enum.Enum):
    GRASP = "grasp"
    PRESS = "press"
    PUSH = "push"

    def __str__(self):
        return self.value


HEURISTIC_JOINTS = {
    Heuristic.GRASP: ("index_tip", "thumb_tip", "index_mcp", "thumb_dip"),
    Heuristic.PRESS: ("index_tip", "index_dip", "index_pip", "index_mcp"),
    Heuristic.PUSH: ("push_tip", "push_dip", "push_pip", "push_mcp"),
}

_FINGER_PARTS = ("tip", "dip", "pip", "mcp")


@dataclass(frozen=True, eq=False)
class GripperModel:
    stroke: float
    landmarks: dict

    def __post_init__(self):
        if not self.stroke > 0:
            raise ValidationError("gripper stroke must be positive")
        required = ("left_tip", "right_tip", "palm_base", "contact_tip", "contact_mid", "contact_base")
        missing = [n for n in required if n not in self.landmarks]
        if missing:
            raise ValidationError(f"gripper model is missing landmarks {missing}")
        lm = {k: np.asarray(v, dtype=float).reshape(3) for k, v in self.landmarks.items()}
        if not all(np.all(np.isfinite(v)) for v in lm.values()):
            raise ValidationError("gripper landmarks must be finite")
        contact = np.stack([lm["contact_tip"], lm["contact_mid"], lm["contact_base"]])
        if np.linalg.norm(lm["contact_tip"] - lm["contact_base"]) == 0 or centered_rank(contact) > 1:
            raise ValidationError("contact landmarks must be distinct and collinear")
        object.__setattr__(self, "landmarks", lm)

    def __getitem__(self, name) -> np.ndarray:
        return self.landmarks[name]

    def contact_line(self, n=4) -> np.ndarray:
        """``n`` evenly spaced points from contact tip to contact base."""
        w = np.linspace(0.0, 1.0, n)[:, None]
        return (1.0 - w) * self["contact_tip"] + w * self["contact_base"]

    def to_dict(self) -> dict:
        return {"stroke": self.stroke, "landmarks": {k: v.tolist() for k, v in self.landmarks.items()}}


def robotiq_2f85() -> GripperModel:
    """Reference landmarks for a Robotiq 2F-85 (meters, gripper-local frame)."""
    s = 0.085
    return GripperModel(s, {
        "left_tip": [s / 2, 0.0, 0.150],
        "right_tip": [-s / 2, 0.0, 0.150],
        "palm_base": [0.0, 0.0, 0.100],
        "contact_tip": [0.0, 0.0, 0.150],
        "contact_mid": [0.0, 0.0, 0.125],
        "contact_base": [0.0, 0.0, 0.100],
    })


def load_gripper_model(path) -> GripperModel:
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(path)
    try:
        doc = json.loads(path.read_text())
        return GripperModel(float(doc["stroke"]), dict(doc["landmarks"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise SchemaError(f"{path}: malformed gripper model ({exc})") from exc


@dataclass(eq=False)
class GripperPose:
    pose: RigidTransform
    opening_fraction: float
    heuristic: Heuristic
    residual: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.opening_fraction <= 1.0:
            raise ValidationError("opening_fraction must lie in [0, 1]")
        if self.heuristic != Heuristic.GRASP and self.opening_fraction != 0.0:
            raise ValidationError("press and push poses are always closed")

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation


@dataclass(eq=False)
class GripperTrajectory:
    poses: list
    frame_ids: list = field(default=None)

    def __post_init__(self):
        if not self.poses:
            raise ValidationError("gripper trajectory is empty")
        if self.frame_ids is None:
            self.frame_ids = list(range(len(self.poses)))

    def __len__(self):
        return len(self.poses)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([p.residual for p in self.poses])

    @property
    def opening_fractions(self) -> np.ndarray:
        return np.array([p.opening_fraction for p in self.poses])

    @property
    def positions(self) -> np.ndarray:
        return np.stack([p.position for p in self.poses])

    def close_commands(self) -> list:
        """Binary close command per step.

        Press and push are always closed.  For grasp the gripper closes once the
        opening fraction stays below 0.5 for two consecutive steps.
        """
        out = []
        run = 0
        for p in self.poses:
            if p.heuristic != Heuristic.GRASP:
                out.append(True)
                continue
            run = run + 1 if p.opening_fraction < CLOSE_THRESHOLD else 0
            out.append(run >= CLOSE_SUSTAIN)
        return out


def _finger_targets(frame: HandJointFrame, heuristic: Heuristic) -> np.ndarray:
    if heuristic == Heuristic.PRESS:
        return np.stack([frame[f"index_{p}"] for p in _FINGER_PARTS])
    if frame.has(*(f"push_{p}" for p in _FINGER_PARTS)):
        return np.stack([frame[f"push_{p}"] for p in _FINGER_PARTS])
    return np.stack([0.5 * (frame[f"index_{p}"] + frame[f"middle_{p}"]) for p in _FINGER_PARTS])


def _perpendicular(v, axis) -> np.ndarray:
    return v - np.dot(v, axis) * axis


def fit_contact_line(source, target) -> RigidTransform:
    """Least-squares rigid fit of collinear ``source`` points onto ``target``.

    Every rotation about the fitted line attains the same residual; the roll is
    fixed by sending the local +y axis towards the side on which the interior
    target points bulge away from the chord joining the end points.  For a
    perfectly straight target the world axis most orthogonal to the line is
    used instead.
    """
    S = np.asarray(source, dtype=float)
    D = np.asarray(target, dtype=float)
    cs, cd = S.mean(axis=0), D.mean(axis=0)
    a = S[0] - S[-1]
    a /= np.linalg.norm(a)
    lam = (S - cs) @ a
    m = lam @ (D - cd)
    scale = max(np.abs(D - cd).max(), 1e-300)
    if np.linalg.norm(m) <= 1e-12 * scale * np.abs(lam).sum():
        raise DegenerateHandError("finger joints do not define a direction")
    d = m / np.linalg.norm(m)

    y_local = _perpendicular(np.array([0.0, 1.0, 0.0]), a)
    if np.linalg.norm(y_local) < 1e-9:
        y_local = _perpendicular(np.array([1.0, 0.0, 0.0]), a)
    y_local /= np.linalg.norm(y_local)

    bend = _perpendicular(D[1:-1].mean(axis=0) - 0.5 * (D[0] + D[-1]), d)
    if np.linalg.norm(bend) <= 1e-9 * scale:
        axes = np.eye(3)
        bend = _perpendicular(axes[int(np.argmin(np.abs(axes @ d)))], d)
    bend /= np.linalg.norm(bend)

    L = np.column_stack([a, y_local, np.cross(a, y_local)])
    W = np.column_stack([d, bend, np.cross(d, bend)])
    R = W @ L.T
    return RigidTransform(R, cd - R @ cs)


def grasp_pose(frame: HandJointFrame, model: GripperModel) -> GripperPose:
    tips = np.stack([frame.index_tip, frame.thumb_tip])
    separation = float(np.linalg.norm(tips[0] - tips[1]))
    if separation <= _MIN_TIP_SEPARATION:
        raise DegenerateHandError(f"frame {frame.frame_id}: index and thumb tips coincide")
    target = np.vstack([tips, 0.5 * (frame.index_mcp + frame.thumb_dip)])
    if centered_rank(target) < 2:
        raise DegenerateHandError(f"frame {frame.frame_id}: grasp target points are collinear")
    source = np.stack([model["left_tip"], model["right_tip"], model["palm_base"]])
    try:
        T = estimate_rigid_transform(source, target)
    except DegenerateConfigurationError as exc:
        raise DegenerateHandError(str(exc)) from exc
    opening = min(max(separation / model.stroke, 0.0), 1.0)
    return GripperPose(T, opening, Heuristic.GRASP, alignment_rms(T, source, target))


def _closed_pose(frame: HandJointFrame, model: GripperModel, heuristic: Heuristic) -> GripperPose:
    target = _finger_targets(frame, heuristic)
    if not np.all(np.isfinite(target)):
        raise DegenerateHandError(f"frame {frame.frame_id}: non-finite finger joints")
    if np.ptp(target, axis=0).max() == 0:
        raise DegenerateHandError(f"frame {frame.frame_id}: finger joints coincide")
    source = model.contact_line(len(target))
    T = fit_contact_line(source, target)
    return GripperPose(T, 0.0, heuristic, alignment_rms(T, source, target))


def press_pose(frame: HandJointFrame, model: GripperModel) -> GripperPose:
    return _closed_pose(frame, model, Heuristic.PRESS)


def push_pose(frame: HandJointFrame, model: GripperModel) -> GripperPose:
    return _closed_pose(frame, model, Heuristic.PUSH)


_POSE_FN = {Heuristic.GRASP: grasp_pose, Heuristic.PRESS: press_pose, Heuristic.PUSH: push_pose}


def map_trajectory(traj: HandTrajectory, heuristic, model: GripperModel | None = None) -> GripperTrajectory:
    heuristic = Heuristic(heuristic)
    model = model or robotiq_2f85()
    fn = _POSE_FN[heuristic]
    poses = []
    for i, frame in enumerate(traj.frames):
        try:
            poses.append(fn(frame, model))
        except DegenerateHandError as exc:
            raise DegenerateHandError(f"trajectory frame {i}: {exc}", frame_index=i) from exc
        except MissingJointsError as exc:
            raise MissingJointsError(f"trajectory frame {i}: {exc}") from exc
    return GripperTrajectory(poses, traj.frame_ids)


def select_joints(traj: HandTrajectory, heuristic) -> HandTrajectory:
    """Restrict a trajectory to the joints the heuristic consumes."""
    heuristic = Heuristic(heuristic)
    names = HEURISTIC_JOINTS[heuristic]
    if heuristic == Heuristic.PUSH and not traj.frames[0].has(*names):
        blocks = [np.stack([0.5 * (f[f"index_{p}"] + f[f"middle_{p}"]) for p in _FINGER_PARTS])
                  for f in traj.frames]
    else:
        blocks = [np.stack([f[n] for n in names]) for f in traj.frames]
    return HandTrajectory.from_array(np.stack(blocks), names, traj.frame_ids, traj.clip_id)
