"""Camera stabilization for first-person clips.

Static-scene masks and 2D point tracks come from external segmentation and
tracking models; this module only consumes their files.  Each frame's pose is
estimated directly against the clip's first frame.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    InsufficientStaticAreaError,
    MissingAssetError,
    NoConsensusError,
    SchemaError,
    UnknownFrameError,
    UnstabilizableClipError,
    ValidationError,
)
from .geometry import CameraIntrinsics, RigidTransform, check_depth_map, robust_rigid_transform

log = logging.getLogger(__name__)


@dataclass(eq=False)
class StaticMask:
    frame_id: int
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValidationError("static mask must be 2-D")

    def contains(self, u, v) -> bool:
        iu, iv = int(round(u)), int(round(v))
        h, w = self.mask.shape
        return 0 <= iu < w and 0 <= iv < h and bool(self.mask[iv, iu])


@dataclass(eq=False)
class TrackSet:
    """Tracks over a sequence of frames.

    ``uv`` has shape ``(n_frames, n_tracks, 2)`` and ``visible`` has shape
    ``(n_frames, n_tracks)``; row ``i`` belongs to ``frame_ids[i]``.
    """

    track_ids: list
    frame_ids: list
    uv: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=float)
        self.visible = np.asarray(self.visible, dtype=bool)
        n_f, n_t = len(self.frame_ids), len(self.track_ids)
        if self.uv.shape != (n_f, n_t, 2) or self.visible.shape != (n_f, n_t):
            raise ValidationError("track arrays do not match frame and track counts")
        if list(self.frame_ids) != sorted(set(self.frame_ids)):
            raise ValidationError("track frame ids must be strictly increasing")

    def row(self, frame_id) -> int:
        try:
            return self.frame_ids.index(frame_id)
        except ValueError:
            raise UnknownFrameError(f"no track data for frame {frame_id}") from None

    def restrict(self, frame_ids) -> "TrackSet":
        """Subset of frames, keeping only tracks visible in the first requested frame."""
        rows = [self.row(f) for f in frame_ids]
        keep = self.visible[rows[0]]
        return TrackSet([t for t, k in zip(self.track_ids, keep) if k], list(frame_ids),
                        self.uv[rows][:, keep], self.visible[rows][:, keep])

    def filter_tracks(self, keep) -> "TrackSet":
        keep = np.asarray(keep, dtype=bool)
        return TrackSet([t for t, k in zip(self.track_ids, keep) if k], list(self.frame_ids),
                        self.uv[:, keep], self.visible[:, keep])


@dataclass(eq=False)
class FramePoses:
    """Per-frame transforms taking frame-t camera coordinates into frame-1 coordinates."""

    poses: dict
    flagged: list = field(default_factory=list)
    inlier_counts: dict = field(default_factory=dict)

    @property
    def frame_ids(self):
        return list(self.poses)

    def __getitem__(self, frame_id) -> RigidTransform:
        try:
            return self.poses[frame_id]
        except KeyError:
            raise UnknownFrameError(f"no pose for frame {frame_id}") from None

    def __contains__(self, frame_id):
        return frame_id in self.poses


def sample_static_points(mask: StaticMask, count: int, seed: int = 0, min_separation: float = 0.0):
    """Random static pixels ``(u, v)`` at least ``min_separation`` apart, shape ``(count, 2)``."""
    vv, uu = np.nonzero(mask.mask)
    candidates = np.column_stack([uu, vv])
    rng = np.random.default_rng(seed)
    chosen = []
    for i in rng.permutation(len(candidates)):
        p = candidates[i]
        if min_separation > 0 and chosen:
            d = np.linalg.norm(np.asarray(chosen) - p, axis=1)
            if d.min() < min_separation:
                continue
        chosen.append(p)
        if len(chosen) == count:
            return np.array(chosen, dtype=int)
    raise InsufficientStaticAreaError(
        f"only {len(chosen)} of {count} static pixels could be sampled at separation {min_separation}")


def _lift_tracks(uv, visible, depth, intrinsics: CameraIntrinsics):
    """3D points for visible tracks with a valid depth reading; returns ``(points, valid)``."""
    D = check_depth_map(depth)
    h, w = D.shape
    iu = np.rint(uv[:, 0]).astype(int)
    iv = np.rint(uv[:, 1]).astype(int)
    valid = visible & (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
    valid &= (uv[:, 0] >= 0) & (uv[:, 0] < intrinsics.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intrinsics.height)
    d = np.zeros(len(uv))
    d[valid] = D[iv[valid], iu[valid]]
    valid &= d > 0
    pts = np.column_stack([(uv[:, 0] - intrinsics.cx) / intrinsics.fx * d,
                           (uv[:, 1] - intrinsics.cy) / intrinsics.fy * d,
                           d])
    return pts, valid


def estimate_frame_poses(tracks: TrackSet, depths: dict, intrinsics: CameraIntrinsics,
                         inlier_threshold=0.01, max_iterations=500, seed=0) -> FramePoses:
    """Robust SE(3) pose of every frame relative to the first frame of ``tracks``.

    Frames without three usable correspondences or without RANSAC consensus
    inherit the previous frame's pose and are listed in ``flagged``.
    """
    if not tracks.frame_ids:
        raise UnstabilizableClipError("track set has no frames")
    first = tracks.frame_ids[0]
    if first not in depths:
        raise UnstabilizableClipError(f"no depth map for first frame {first}")
    p1, ok1 = _lift_tracks(tracks.uv[0], tracks.visible[0], depths[first], intrinsics)
    if ok1.sum() < 3:
        raise UnstabilizableClipError(f"first frame {first} has {int(ok1.sum())} valid tracked points, need 3")

    poses = {first: RigidTransform.identity()}
    counts = {first: int(ok1.sum())}
    flagged = []
    prev = poses[first]
    for i, fid in enumerate(tracks.frame_ids[1:], start=1):
        pose = None
        if fid in depths:
            pt, okt = _lift_tracks(tracks.uv[i], tracks.visible[i], depths[fid], intrinsics)
            both = ok1 & okt
            if both.sum() >= 3:
                try:
                    pose, mask = robust_rigid_transform(pt[both], p1[both], inlier_threshold,
                                                        max_iterations, seed + i)
                    counts[fid] = int(mask.sum())
                except NoConsensusError:
                    pose = None
        if pose is None:
            log.warning("frame %s: no pose consensus, inheriting previous pose", fid)
            flagged.append(fid)
            counts[fid] = 0
            pose = prev
        poses[fid] = pose
        prev = pose
    return FramePoses(poses, flagged, counts)


def reexpress_in_frame1(poses: FramePoses, frame_id, points) -> np.ndarray:
    T = poses[frame_id]
    return T.apply(np.asarray(points, dtype=float))


def read_tracks(path) -> TrackSet:
    """Load a track file ``{"tracks": [{"id", "points": [[t, u, v, visible], ...]}]}``."""
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(path)
    try:
        doc = json.loads(path.read_text())
        entries = doc["tracks"]
        frames = sorted({int(p[0]) for e in entries for p in e["points"]})
        ids = [e["id"] for e in entries]
        row = {f: i for i, f in enumerate(frames)}
        uv = np.zeros((len(frames), len(ids), 2))
        vis = np.zeros((len(frames), len(ids)), dtype=bool)
        for j, e in enumerate(entries):
            for t, u, v, visible in e["points"]:
                uv[row[int(t)], j] = (u, v)
                vis[row[int(t)], j] = bool(visible)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed track file ({exc})") from exc
    return TrackSet(ids, frames, uv, vis)


def write_tracks(path, tracks: TrackSet) -> None:
    entries = []
    for j, tid in enumerate(tracks.track_ids):
        pts = [[int(f), float(tracks.uv[i, j, 0]), float(tracks.uv[i, j, 1]), bool(tracks.visible[i, j])]
               for i, f in enumerate(tracks.frame_ids)]
        entries.append({"id": tid, "points": pts})
    Path(path).write_text(json.dumps({"tracks": entries}))


def read_mask(path, frame_id=0) -> StaticMask:
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(path)
    with Image.open(path) as im:
        return StaticMask(frame_id, np.asarray(im.convert("L")) > 0)


def write_mask(path, mask: StaticMask) -> None:
    Image.fromarray(mask.mask.astype(np.uint8) * 255).save(path)
