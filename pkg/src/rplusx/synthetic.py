"""Synthetic scenes with known ground truth.

Used by the test-suite as generator-side oracles and by ``rx make-synthetic``
to produce a small on-disk recording for trying the CLI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .assets import write_depth
from .descriptors import DescriptorGrid, l2_normalize, write_descriptor_grid
from .geometry import CameraIntrinsics, RigidTransform, project_many, rotation_about_axis
from .gripper import GripperModel, robotiq_2f85
from .hands import JOINT_NAMES, HandJointFrame, write_hand_file
from .stabilization import TrackSet, write_tracks

INTRINSICS = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_transform(rng, translation_scale=1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def hand_from_gripper(pose: RigidTransform, opening: float, model: GripperModel | None = None,
                      frame_id=0) -> HandJointFrame:
    """A 21-joint hand whose grasp landmarks sit exactly on ``pose`` with the given aperture."""
    model = model or robotiq_2f85()
    half = 0.5 * opening
    tip_z = model["left_tip"][2]
    base = model["palm_base"]
    local = {
        "index_tip": np.array([half, 0.0, tip_z]),
        "thumb_tip": np.array([-half, 0.0, tip_z]),
        "index_mcp": base + np.array([0.02, 0.01, 0.0]),
        "thumb_ip": base - np.array([0.02, 0.01, 0.0]),
        "wrist": base - np.array([0.0, 0.0, 0.08]),
    }
    for finger, x in (("index", half), ("middle", half + 0.005), ("ring", half + 0.01), ("pinky", half + 0.015)):
        for j, part in enumerate(("mcp", "pip", "dip", "tip")):
            name = f"{finger}_{part}"
            if name not in local:
                local[name] = np.array([x * (0.4 + 0.2 * j), 0.01 * (3 - j) + 0.005, base[2] + 0.015 * j])
    for j, part in enumerate(("cmc", "mcp")):
        local[f"thumb_{part}"] = np.array([-half * (0.3 + 0.2 * j), -0.02, base[2] - 0.02 + 0.01 * j])
    joints = np.stack([local[n] for n in JOINT_NAMES])
    return HandJointFrame(frame_id, pose.apply(joints))


def finger_from_pose(pose: RigidTransform, model: GripperModel | None = None, bend=0.0,
                     frame_id=0) -> HandJointFrame:
    """A hand whose index (and middle) finger lies on the closed contact line of ``pose``.

    ``bend`` pushes the dip and pip joints off the line by that many meters
    along gripper-local +y.
    """
    model = model or robotiq_2f85()
    line = model.contact_line(4)
    line[1:3] += np.array([0.0, bend, 0.0])
    local = {f"index_{p}": line[i] for i, p in enumerate(("tip", "dip", "pip", "mcp"))}
    local.update({f"middle_{p}": line[i] for i, p in enumerate(("tip", "dip", "pip", "mcp"))})
    rest = [n for n in JOINT_NAMES if n not in local]
    for i, n in enumerate(rest):
        local[n] = np.array([0.03 + 0.002 * i, -0.02, 0.09 + 0.003 * i])
    return HandJointFrame(frame_id, pose.apply(np.stack([local[n] for n in JOINT_NAMES])))


def planted_grids(rng, n_frames, k, rows=12, cols=16, dim=64, patch_size=16):
    """Descriptor grids of random unit rows sharing ``k`` planted descriptors.

    Returns ``(grids, planted_positions, planted_vectors)``; ``planted_positions[f][i]``
    is the patch index of planted descriptor ``i`` in frame ``f``.
    """
    planted = l2_normalize(rng.normal(size=(k, dim)))
    grids, positions = [], []
    for f in range(n_frames):
        data = l2_normalize(rng.normal(size=(rows * cols, dim)))
        pos = rng.choice(rows * cols, size=k, replace=False)
        data[pos] = planted
        grids.append(DescriptorGrid(f, rows, cols, data, patch_size))
        positions.append(pos)
    return grids, positions, planted


@dataclass
class CameraRig:
    intrinsics: CameraIntrinsics
    frame_ids: list
    poses: dict            # true T_{1<-t}
    tracks: TrackSet
    depths: dict
    dynamic: np.ndarray    # bool per track


def camera_rig(rng, n_frames=8, n_static=40, dynamic_fraction=0.3, plane_depth=0.6, step=None,
               intrinsics=INTRINSICS, first_frame=0) -> CameraRig:
    """Camera moving over a fronto-parallel plane, observed through 2D tracks.

    The camera rotates about its optical axis and translates, so every depth
    map is constant and lifting tracked pixels is exact.  A fraction of the
    tracks follows an object that moves independently of the scene.
    """
    frame_ids = list(range(first_frame, first_frame + n_frames))
    poses = {}
    for i, f in enumerate(frame_ids):
        if step is not None:
            c = np.array([step * i, 0.0, 0.0])
            theta = 0.0
        else:
            c = np.array([rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.integers(-30, 31) / 1000.0])
            theta = rng.uniform(-0.2, 0.2)
        if i == 0:
            c, theta = np.zeros(3), 0.0
        poses[f] = RigidTransform(rotation_about_axis([0, 0, 1], theta), c)

    n_dynamic = int(round(dynamic_fraction * n_static / (1 - dynamic_fraction))) if dynamic_fraction else 0
    W, H = intrinsics.width, intrinsics.height
    margin = 0.3
    uv0 = np.column_stack([rng.uniform(margin * W, (1 - margin) * W, n_static),
                           rng.uniform(margin * H, (1 - margin) * H, n_static)])
    static_world = np.column_stack([(uv0[:, 0] - intrinsics.cx) / intrinsics.fx * plane_depth,
                                    (uv0[:, 1] - intrinsics.cy) / intrinsics.fy * plane_depth,
                                    np.full(n_static, plane_depth)])
    dyn_base = np.column_stack([rng.uniform(-0.05, 0.05, n_dynamic), rng.uniform(-0.05, 0.05, n_dynamic),
                                np.full(n_dynamic, plane_depth - 0.15)])
    dyn_velocity = np.array([0.04, 0.03, -0.02])

    n = n_static + n_dynamic
    uv = np.zeros((n_frames, n, 2))
    vis = np.zeros((n_frames, n), dtype=bool)
    depths = {}
    for i, f in enumerate(frame_ids):
        inv = poses[f].inverse()
        world = np.vstack([static_world, dyn_base + i * dyn_velocity])
        cam = inv.apply(world)
        px = project_many(cam, intrinsics)
        uv[i] = px
        vis[i] = (px[:, 0] >= 0) & (px[:, 0] <= W - 1) & (px[:, 1] >= 0) & (px[:, 1] <= H - 1)
        depths[f] = np.full((H, W), plane_depth - poses[f].translation[2])
    tracks = TrackSet(list(range(n)), frame_ids, uv, vis)
    dynamic = np.zeros(n, dtype=bool)
    dynamic[n_static:] = True
    return CameraRig(intrinsics, frame_ids, poses, tracks, depths, dynamic)


# ---- on-disk end-to-end scene -------------------------------------------------

PATCH = 16
GRID_ROWS, GRID_COLS = 30, 40
DESC_DIM = 32
PLANE_DEPTH = 0.6
COMMAND = "grasp the can"

# object layouts as (row, col) patch cells; layout B is not a rigid copy of A
LAYOUT_A = [(10, 15), (10, 18), (12, 20), (14, 16), (15, 19), (11, 22)]
LAYOUT_B = [(8, 10), (8, 16), (12, 20), (16, 12), (18, 18), (10, 24)]
LIVE_SHIFT = (-2, -6)   # (rows, cols) after rotating layout A by 90 degrees


def _cell_point(r, c):
    u, v = PATCH * c + PATCH // 2, PATCH * r + PATCH // 2
    return np.array([(u - INTRINSICS.cx) / INTRINSICS.fx * PLANE_DEPTH,
                     (v - INTRINSICS.cy) / INTRINSICS.fy * PLANE_DEPTH, PLANE_DEPTH])


def _rotate_cell(r, c):
    # 90 degree rotation about the principal point, in patch cells
    return c - 5, 34 - r


def live_layout():
    return [(rr + LIVE_SHIFT[0], cc + LIVE_SHIFT[1]) for rr, cc in (_rotate_cell(r, c) for r, c in LAYOUT_A)]


def live_transform() -> RigidTransform:
    """The rigid motion taking layout-A keypoints to the live keypoints."""
    step = PATCH / INTRINSICS.fx * PLANE_DEPTH
    return RigidTransform(rotation_about_axis([0, 0, 1], np.pi / 2).round(15),
                          [step * LIVE_SHIFT[1], step * LIVE_SHIFT[0], 0.0])


def _scene_grid(rng, frame_id, layout, planted):
    data = l2_normalize(rng.normal(size=(GRID_ROWS * GRID_COLS, DESC_DIM)))
    for i, (r, c) in enumerate(layout):
        data[r * GRID_COLS + c] = planted[i]
    return DescriptorGrid(frame_id, GRID_ROWS, GRID_COLS, data, PATCH)


def demo_gripper_poses(anchor, n, yaw0=0.0, lateral=(0.03, 0.0)):
    """Approach-and-close gripper poses in clip frame-1 coordinates."""
    poses, openings = [], []
    for i in range(n):
        s = i / max(n - 1, 1)
        pos = anchor + np.array([lateral[0] * (1 - s), lateral[1] * (1 - s), -0.35 + 0.12 * s])
        R = rotation_about_axis([0, 0, 1], yaw0 + 0.3 * s)
        poses.append(RigidTransform(R, pos))
        openings.append(0.08 - 0.06 * s)
    return poses, openings


def _clip_assets(rng, first, n, layout, planted, gripper_poses, openings, model):
    """Camera motion, tracks, depths and raw (camera-frame) hands of one clip."""
    rig = camera_rig(rng, n_frames=n, plane_depth=PLANE_DEPTH, first_frame=first)
    joints = {}
    for i, f in enumerate(rig.frame_ids):
        hand = hand_from_gripper(gripper_poses[i], openings[i], model, f)
        joints[f] = HandJointFrame(f, rig.poses[f].inverse().apply(hand.joints))
    return rig, joints


def write_scene(out_dir, seed=0, clip_len=10, gap=2, fps=10.0) -> dict:
    """Write a two-clip grasp recording, a live frame and a mock VLM script.

    Returns paths plus the oracle: the gripper poses expected for the live
    frame are ``live_transform() @ demo pose`` for every step of clip 1.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    model = robotiq_2f85()
    planted = l2_normalize(rng.normal(size=(len(LAYOUT_A), DESC_DIM)))

    anchor_a = np.mean([_cell_point(*c) for c in LAYOUT_A], axis=0)
    anchor_b = np.mean([_cell_point(*c) for c in LAYOUT_B], axis=0)
    demo_a, open_a = demo_gripper_poses(anchor_a, clip_len)
    demo_b, open_b = demo_gripper_poses(anchor_b, clip_len, yaw0=0.5, lateral=(-0.02, 0.03))

    clip2_first = clip_len + gap
    rig_a, joints_a = _clip_assets(rng, 0, clip_len, LAYOUT_A, planted, demo_a, open_a, model)
    rig_b, joints_b = _clip_assets(rng, clip2_first, clip_len, LAYOUT_B, planted, demo_b, open_b, model)

    frames = []
    n_total = 2 * clip_len + gap
    presence = {}
    for t in range(n_total):
        entry = {"t": t, "depth": f"depth_{t:04d}.png", "descriptors": f"desc_{t:04d}.rxdg",
                 "hands": "hands.json", "rgb": None, "mask": None, "tracks": None}
        if t < clip_len:
            depth, rig = rig_a.depths[t], rig_a
            entry["tracks"] = "tracks_clip1.json"
        elif t >= clip2_first:
            depth, rig = rig_b.depths[t], rig_b
            entry["tracks"] = "tracks_clip2.json"
        else:
            depth, rig = np.full((INTRINSICS.height, INTRINSICS.width), PLANE_DEPTH), None
        write_depth(out / entry["depth"], depth)
        if t == 0:
            grid = _scene_grid(rng, t, LAYOUT_A, planted)
        elif t == clip2_first:
            grid = _scene_grid(rng, t, LAYOUT_B, planted)
        else:
            grid = DescriptorGrid(t, 1, 1, l2_normalize(rng.normal(size=(1, DESC_DIM))), PATCH)
        write_descriptor_grid(out / entry["descriptors"], grid)
        presence[t] = rig is not None
        frames.append(entry)

    write_tracks(out / "tracks_clip1.json", rig_a.tracks)
    write_tracks(out / "tracks_clip2.json", rig_b.tracks)
    write_hand_file(out / "hands.json", {**joints_a, **joints_b}, presence)

    manifest = {"recording_id": f"synthetic-{seed}", "fps": fps, "intrinsics": INTRINSICS.to_dict(),
                "frames": frames}
    (out / "recording.json").write_text(json.dumps(manifest, indent=1))

    write_depth(out / "live_depth.png", np.full((INTRINSICS.height, INTRINSICS.width), PLANE_DEPTH))
    write_descriptor_grid(out / "live_desc.rxdg", _scene_grid(rng, -1, live_layout(), planted))
    live = {"recording_id": "live", "fps": fps, "intrinsics": INTRINSICS.to_dict(),
            "frames": [{"t": 0, "depth": "live_depth.png", "descriptors": "live_desc.rxdg"}]}
    (out / "live.json").write_text(json.dumps(live, indent=1))

    duration = clip_len / fps
    script = {COMMAND: {"spans": [[0.0, duration], [duration, 2 * duration]], "heuristic": "grasp"}}
    (out / "vlm_script.json").write_text(json.dumps(script, indent=1))
    (out / "annotations.json").write_text(json.dumps({COMMAND: [[0.0, duration], [duration, 2 * duration]]}))
    config = {"k": len(LAYOUT_A), "vlm_script": str((out / "vlm_script.json").resolve())}
    (out / "config.toml").write_text("".join(f"{k} = {json.dumps(v)}\n" for k, v in config.items()))

    g = live_transform()
    return {
        "manifest": out / "recording.json",
        "live": out / "live.json",
        "vlm_script": out / "vlm_script.json",
        "annotations": out / "annotations.json",
        "config": out / "config.toml",
        "command": COMMAND,
        "k": len(LAYOUT_A),
        "live_transform": g,
        "demo_poses": demo_a,
        "demo_openings": open_a,
        "expected_poses": [g @ p for p in demo_a],
        "expected_openings": [min(o / model.stroke, 1.0) for o in open_a],
        "true_camera_poses": {**rig_a.poses, **rig_b.poses},
    }
