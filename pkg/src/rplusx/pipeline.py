"""End-to-end orchestration: ingest -> retrieve -> preprocess -> generate -> retarget."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import descriptors as desc
from .assets import read_depth
from .context import (
    ContextExample,
    EchoNearestBackend,
    GenerationConfig,
    HttpLlmBackend,
    augment,
    generate_trajectory,
    rank_examples,
)
from .errors import MissingAssetError, MissingJointsError, RxError, SchemaError, StageError, ValidationError
from .geometry import CameraIntrinsics, RigidTransform
from .gripper import (
    GripperPose,
    GripperTrajectory,
    Heuristic,
    load_gripper_model,
    map_trajectory,
    robotiq_2f85,
    select_joints,
)
from .hands import HandTrajectory, PresenceTimeline, build_hand_trajectory, read_hand_file, resample_trajectory
from .retrieval import (
    ClipSpan,
    Command,
    FrameAssets,
    HttpVlmClient,
    MockVlmClient,
    Recording,
    retrieve_clips,
    segment_by_presence,
    select_heuristic,
)
from .stabilization import TrackSet, estimate_frame_poses, read_mask, read_tracks

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

RESULT_FORMAT = "rx-result/1"
ENV_PREFIX = "RX_"

_PATH = {"type": ["string", "null"]}
MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["recording_id", "fps", "intrinsics", "frames"],
    "additionalProperties": False,
    "properties": {
        "recording_id": {"type": "string"},
        "fps": {"type": "number", "exclusiveMinimum": 0},
        "intrinsics": {
            "type": "object",
            "required": ["fx", "fy", "cx", "cy", "width", "height"],
            "additionalProperties": False,
            "properties": {
                "fx": {"type": "number"}, "fy": {"type": "number"},
                "cx": {"type": "number"}, "cy": {"type": "number"},
                "width": {"type": "integer", "minimum": 1}, "height": {"type": "integer", "minimum": 1},
            },
        },
        "frames": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["t", "depth", "descriptors"],
                "additionalProperties": False,
                "properties": {
                    "t": {"type": "integer", "minimum": 0},
                    "depth": {"type": "string"},
                    "descriptors": {"type": "string"},
                    "hands": _PATH, "rgb": _PATH, "mask": _PATH, "tracks": _PATH,
                },
            },
        },
    },
}

_POINTS = {"type": "array", "items": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}}
_TRAJ = {
    "type": "object",
    "required": ["frames", "joints"],
    "properties": {
        "joints": {"type": "array", "items": {"type": "string"}},
        "frames": {"type": "array", "items": {"type": "object", "required": ["t", "joints"],
                                               "properties": {"t": {"type": "integer"}, "joints": _POINTS}}},
    },
}
RESULT_SCHEMA = {
    "type": "object",
    "required": ["format", "command", "spans", "keypoints", "demos", "trajectory", "gripper", "diagnostics"],
    "properties": {
        "format": {"const": RESULT_FORMAT},
        "command": {"type": "string"},
        "heuristic": {"enum": [h.value for h in Heuristic] + [None]},
        "spans": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                              "minItems": 2, "maxItems": 2}},
        "keypoints": {"type": "object", "properties": {"clips": {"type": "array"}, "live": {}}},
        "demos": {"type": "array", "items": _TRAJ},
        "trajectory": {"anyOf": [{"type": "null"}, {
            "allOf": [_TRAJ, {"type": "object", "required": ["meta"], "properties": {"meta": {
                "type": "object", "required": ["fallback_used", "backend", "residual_rms"]}}}]}]},
        "gripper": {"anyOf": [{"type": "null"}, {"type": "object", "required": ["steps"]}]},
        "diagnostics": {"type": "object"},
    },
}


@dataclass
class PipelineConfig:
    k: int = desc.DEFAULT_K
    quantum: float = 0.001
    translation_range: float = 0.0
    rotation_range: float = 0.0
    augment_copies: int = 0
    retrieval_tolerance: float = 3.0
    inlier_threshold: float = 0.01
    max_iterations: int = 500
    min_gap: int = 1
    gripper_model: str | None = None
    backend: str = "baseline"
    llm_endpoint: str | None = None
    llm_model: str | None = None
    vlm: str = "mock"
    vlm_script: str | None = None
    vlm_endpoint: str | None = None
    vlm_model: str | None = None
    retries: int = 2
    max_steps: int = 40
    resample_length: int | None = None
    context_budget: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.k >= 1, "k must be >= 1"),
            (self.quantum > 0, "quantum must be > 0"),
            (self.translation_range >= 0 and self.rotation_range >= 0, "augmentation ranges must be >= 0"),
            (self.augment_copies >= 0, "augment_copies must be >= 0"),
            (self.retrieval_tolerance >= 0, "retrieval_tolerance must be >= 0"),
            (self.inlier_threshold > 0, "inlier_threshold must be > 0"),
            (self.max_iterations >= 1, "max_iterations must be >= 1"),
            (self.min_gap >= 0, "min_gap must be >= 0"),
            (self.backend in ("baseline", "echo", "llm"), "backend must be baseline, echo or llm"),
            (self.vlm in ("mock", "http"), "vlm must be mock or http"),
            (self.retries >= 0, "retries must be >= 0"),
            (self.max_steps >= 1, "max_steps must be >= 1"),
            (self.resample_length is None or self.resample_length >= 2, "resample_length must be >= 2"),
            (self.context_budget is None or self.context_budget >= 1, "context_budget must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValidationError(f"invalid config: {message}")

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        hints = typing.get_type_hints(cls)
        return cls(**{k: _coerce(v, hints[k], k) for k, v in values.items()})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value, hint, key):
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    base = args[0] if args else hint
    if value is None or (isinstance(value, str) and value.lower() in ("", "none", "null") and args):
        if args:
            return None
        raise ValidationError(f"config key {key} cannot be empty")
    try:
        if base is int and not isinstance(value, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if base is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"config key {key}: cannot interpret {value!r}") from exc


def load_config(path=None, overrides: dict | None = None, environ=None) -> PipelineConfig:
    """Config file, then explicit overrides, then ``RX_<KEY>`` environment variables."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise MissingAssetError(path)
        try:
            values.update(tomllib.loads(path.read_text()))
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    environ = os.environ if environ is None else environ
    for f in dataclasses.fields(PipelineConfig):
        name = ENV_PREFIX + f.name.upper()
        if name in environ:
            values[f.name] = environ[name]
    return PipelineConfig.from_mapping(values)


def _resolve(root: Path, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else root / p


def ingest(manifest_path, require_hands: bool = True) -> Recording:
    """Load and eagerly validate a recording manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingAssetError(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except ValueError as exc:
        raise SchemaError(f"{manifest_path}: not valid JSON ({exc})") from exc
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"{manifest_path}: {exc.message}") from exc

    root = manifest_path.parent
    frames = []
    for entry in sorted(doc["frames"], key=lambda e: e["t"]):
        frames.append(FrameAssets(
            t=entry["t"],
            depth=_resolve(root, entry["depth"]),
            descriptors=_resolve(root, entry["descriptors"]),
            hands=_resolve(root, entry.get("hands")),
            rgb=_resolve(root, entry.get("rgb")),
            mask=_resolve(root, entry.get("mask")),
            tracks=_resolve(root, entry.get("tracks")),
        ))
    if require_hands and any(f.hands is None for f in frames):
        raise SchemaError(f"{manifest_path}: every frame needs a hands file")

    checked = set()
    for f in frames:
        for p in (f.depth, f.descriptors, f.hands, f.rgb, f.mask, f.tracks):
            if p is not None and p not in checked:
                if not p.is_file():
                    raise MissingAssetError(p)
                checked.add(p)
        desc.read_descriptor_header(f.descriptors)

    return Recording(doc["recording_id"], float(doc["fps"]), CameraIntrinsics.from_dict(doc["intrinsics"]),
                     frames, root)


@dataclass(eq=False)
class LiveFrame:
    depth: np.ndarray
    descriptors: desc.DescriptorGrid
    intrinsics: CameraIntrinsics
    rgb: Path | None = None


def load_live_frame(manifest_path) -> LiveFrame:
    rec = ingest(manifest_path, require_hands=False)
    if len(rec) != 1:
        raise SchemaError(f"{manifest_path}: a live manifest must hold exactly one frame")
    f = rec.frames[0]
    return LiveFrame(read_depth(f.depth), desc.read_descriptor_grid(f.descriptors, -1), rec.intrinsics, f.rgb)


def load_hands(recording: Recording):
    """Joints per frame and the presence timeline of the whole recording."""
    joints, presence = {}, {}
    for path in dict.fromkeys(f.hands for f in recording.frames if f.hands is not None):
        j, p = read_hand_file(path)
        joints.update(j)
        for t, v in p.items():
            presence[t] = presence.get(t, False) or v
    timeline = PresenceTimeline([presence.get(t, False) and t in joints for t in recording.frame_ids])
    return joints, timeline


def load_tracks(recording: Recording, frame_ids) -> TrackSet:
    """Tracks of every track file referenced by ``frame_ids``, aligned to those frames."""
    frame_ids = list(frame_ids)
    paths = list(dict.fromkeys(recording.frame(t).tracks for t in frame_ids
                               if recording.frame(t).tracks is not None))
    ids, uv_blocks, vis_blocks = [], [], []
    for path in paths:
        ts = read_tracks(path)
        uv = np.zeros((len(frame_ids), len(ts.track_ids), 2))
        vis = np.zeros((len(frame_ids), len(ts.track_ids)), dtype=bool)
        for i, f in enumerate(frame_ids):
            if f in ts.frame_ids:
                r = ts.row(f)
                uv[i], vis[i] = ts.uv[r], ts.visible[r]
        prefix = f"{path.stem}:" if len(paths) > 1 else ""
        ids += [f"{prefix}{t}" for t in ts.track_ids]
        uv_blocks.append(uv)
        vis_blocks.append(vis)
    if not ids:
        return TrackSet([], frame_ids, np.zeros((len(frame_ids), 0, 2)), np.zeros((len(frame_ids), 0), bool))
    return TrackSet(ids, frame_ids, np.concatenate(uv_blocks, axis=1), np.concatenate(vis_blocks, axis=1))


@dataclass(eq=False)
class ExecutionResult:
    command: str
    heuristic: Heuristic | None = None
    spans: list = field(default_factory=list)
    clip_frames: list = field(default_factory=list)
    descriptor_set: desc.DescriptorSet | None = None
    clip_keypoints: list = field(default_factory=list)
    demos: list = field(default_factory=list)
    live_keypoints: desc.KeypointSet | None = None
    generated: HandTrajectory | None = None
    gripper: GripperTrajectory | None = None
    diagnostics: dict = field(default_factory=dict)


def make_client(config: PipelineConfig):
    if config.vlm == "mock":
        return MockVlmClient.from_file(config.vlm_script) if config.vlm_script else MockVlmClient({})
    if not config.vlm_endpoint:
        raise ValidationError("vlm=http requires vlm_endpoint")
    return HttpVlmClient(config.vlm_endpoint, model=config.vlm_model)


def make_backend(config: PipelineConfig):
    if config.backend == "echo":
        return EchoNearestBackend()
    if config.backend == "llm":
        if not config.llm_endpoint:
            raise ValidationError("backend=llm requires llm_endpoint")
        return HttpLlmBackend(config.llm_endpoint, model=config.llm_model)
    return None


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class _Stages:
    """Runs named stages, recording timings and converting failures to StageError."""

    def __init__(self, result: ExecutionResult):
        self.result = result
        self.timings = result.diagnostics.setdefault("timings", {})

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except RxError as exc:
            self.result.diagnostics["failure"] = {"stage": name, "error": f"{type(exc).__name__}: {exc}"}
            raise StageError(name, exc, self.result) from exc
        finally:
            self.timings[name] = time.perf_counter() - t0


def execute_command(recording: Recording, live: LiveFrame, command, config: PipelineConfig | None = None,
                    client=None, backend=None, gripper_model=None) -> ExecutionResult:
    config = config or PipelineConfig()
    command = command if isinstance(command, Command) else Command(command)
    result = ExecutionResult(command.text)
    result.diagnostics.update({"failure": None, "stabilization_flags": [], "backend": None,
                               "fallback_used": None, "residual_rms": None, "selected_example": None})
    stages = _Stages(result)

    client = client or stages.run("setup", make_client, config)
    if backend is None:
        backend = stages.run("setup", make_backend, config)
    if gripper_model is None:
        gripper_model = (stages.run("setup", load_gripper_model, config.gripper_model)
                         if config.gripper_model else robotiq_2f85())

    joints, timeline = stages.run("segmentation", load_hands, recording)
    view = stages.run("segmentation", segment_by_presence, recording, timeline, config.min_gap)

    spans = stages.run("retrieval", retrieve_clips, client, view, command)
    result.spans = spans
    result.clip_frames = [view.original_frames(s) for s in spans]
    empty = [i for i, fr in enumerate(result.clip_frames) if not fr]
    if empty:
        stages.run("retrieval", _raise, ValidationError(f"retrieved spans {empty} contain no frames"))

    def keypoints():
        grids = [desc.read_descriptor_grid(recording.frame(fr[0]).descriptors, fr[0])
                 for fr in result.clip_frames]
        pool = grids if len(grids) >= 2 else grids + [live.descriptors]
        dset = desc.select_common_descriptors(pool, config.k)
        result.descriptor_set = dset
        for grid, fr in zip(grids, result.clip_frames):
            px = desc.locate_keypoints(dset, grid)
            depth = read_depth(recording.frame(fr[0]).depth)
            result.clip_keypoints.append(desc.lift_keypoints(px, depth, recording.intrinsics, fr[0]))
        px = desc.locate_keypoints(dset, live.descriptors)
        result.live_keypoints = desc.lift_keypoints(px, live.depth, live.intrinsics, -1)

    stages.run("keypoints", keypoints)

    def demonstrations():
        for ci, fr in enumerate(result.clip_frames):
            tracks = load_tracks(recording, fr).restrict(fr)
            first = recording.frame(fr[0])
            if first.mask is not None:
                mask = read_mask(first.mask, fr[0])
                tracks = tracks.filter_tracks([mask.contains(*tracks.uv[0, j])
                                               for j in range(len(tracks.track_ids))])
            depths = {t: read_depth(recording.frame(t).depth) for t in fr}
            poses = estimate_frame_poses(tracks, depths, recording.intrinsics, config.inlier_threshold,
                                         config.max_iterations, _derived_seed(config.seed, ci))
            result.diagnostics["stabilization_flags"].append(list(poses.flagged))
            with_hands = [t for t in fr if t in joints]
            if not with_hands:
                raise MissingJointsError(f"clip {ci} has no frames with hand joints")
            result.demos.append(build_hand_trajectory(with_hands, joints, poses, clip_id=ci))

    stages.run("stabilization", demonstrations)

    result.heuristic = stages.run("heuristic", select_heuristic, client, command)

    def generation():
        examples = []
        for i, (kps, demo) in enumerate(zip(result.clip_keypoints, result.demos)):
            traj = select_joints(demo, result.heuristic)
            if config.resample_length:
                traj = resample_trajectory(traj, config.resample_length)
            examples.append(ContextExample(kps, traj))
        for i in range(len(examples) if config.augment_copies else 0):
            for c in range(config.augment_copies):
                examples.append(augment(examples[i], _derived_seed(config.seed, i, c, 7),
                                        config.translation_range, config.rotation_range))
        if backend is None:
            best, transforms, rms = rank_examples(examples, result.live_keypoints)
            traj = examples[best].trajectory.map_points(transforms[best].apply)
            result.diagnostics.update(backend="baseline", fallback_used=False,
                                      residual_rms=float(rms[best]), selected_example=best)
            result.generated = HandTrajectory.from_array(traj.positions()[:config.max_steps], traj.names)
        else:
            gen = generate_trajectory(backend, examples, result.live_keypoints,
                                      GenerationConfig(config.quantum, config.retries, config.max_steps,
                                                       config.context_budget))
            result.diagnostics.update(backend=gen.backend, fallback_used=gen.fallback_used,
                                      residual_rms=gen.residual_rms, selected_example=gen.selected_example)
            result.generated = gen.trajectory

    stages.run("generation", generation)
    result.gripper = stages.run("retargeting", map_trajectory, result.generated, result.heuristic, gripper_model)
    return result


def _raise(exc):
    raise exc


def _traj_to_dict(traj: HandTrajectory) -> dict:
    return {"clip_id": traj.clip_id, "joints": list(traj.names),
            "frames": [{"t": int(f.frame_id), "joints": f.joints.tolist()} for f in traj.frames]}


def _traj_from_dict(d) -> HandTrajectory:
    return HandTrajectory.from_array([f["joints"] for f in d["frames"]], tuple(d["joints"]),
                                     [f["t"] for f in d["frames"]], d.get("clip_id"))


def _kps_to_dict(k: desc.KeypointSet) -> dict:
    return {"frame_id": int(k.frame_id), "points": k.points.tolist()}


def result_to_dict(result: ExecutionResult, include_timings: bool = False) -> dict:
    diagnostics = {k: v for k, v in result.diagnostics.items() if include_timings or k != "timings"}
    trajectory = None
    if result.generated is not None:
        trajectory = _traj_to_dict(result.generated)
        trajectory["meta"] = {"fallback_used": diagnostics.get("fallback_used"),
                              "backend": diagnostics.get("backend"),
                              "residual_rms": diagnostics.get("residual_rms")}
    gripper = None
    if result.gripper is not None:
        closes = result.gripper.close_commands()
        gripper = {"steps": [{"t": int(t), "rotation": p.pose.rotation.tolist(),
                              "translation": p.pose.translation.tolist(),
                              "opening_fraction": float(p.opening_fraction), "heuristic": p.heuristic.value,
                              "residual": float(p.residual), "close": bool(c)}
                             for t, p, c in zip(result.gripper.frame_ids, result.gripper.poses, closes)]}
    dset = None
    if result.descriptor_set is not None:
        ds = result.descriptor_set
        dset = {"source_frame_id": int(ds.source_frame_id), "patch_indices": ds.patch_indices.tolist(),
                "descriptors": ds.descriptors.tolist(),
                "scores": ds.scores.tolist() if ds.scores is not None else None}
    return {
        "format": RESULT_FORMAT,
        "command": result.command,
        "heuristic": result.heuristic.value if result.heuristic is not None else None,
        "spans": [s.as_list() for s in result.spans],
        "clip_frames": [list(map(int, fr)) for fr in result.clip_frames],
        "descriptor_set": dset,
        "keypoints": {"clips": [_kps_to_dict(k) for k in result.clip_keypoints],
                      "live": _kps_to_dict(result.live_keypoints) if result.live_keypoints is not None else None},
        "demos": [_traj_to_dict(d) for d in result.demos],
        "trajectory": trajectory,
        "gripper": gripper,
        "diagnostics": diagnostics,
    }


def result_from_dict(doc: dict) -> ExecutionResult:
    try:
        jsonschema.validate(doc, RESULT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"result document: {exc.message}") from exc
    r = ExecutionResult(doc["command"])
    r.heuristic = Heuristic(doc["heuristic"]) if doc.get("heuristic") else None
    r.spans = [ClipSpan(s, e) for s, e in doc["spans"]]
    r.clip_frames = [list(fr) for fr in doc.get("clip_frames", [])]
    ds = doc.get("descriptor_set")
    if ds:
        r.descriptor_set = desc.DescriptorSet(ds["descriptors"], ds["source_frame_id"], ds["patch_indices"],
                                              np.asarray(ds["scores"]) if ds.get("scores") is not None else None)
    r.clip_keypoints = [desc.KeypointSet(k["points"], k["frame_id"]) for k in doc["keypoints"]["clips"]]
    live = doc["keypoints"].get("live")
    r.live_keypoints = desc.KeypointSet(live["points"], live["frame_id"]) if live else None
    r.demos = [_traj_from_dict(d) for d in doc["demos"]]
    r.generated = _traj_from_dict(doc["trajectory"]) if doc["trajectory"] else None
    if doc["gripper"]:
        steps = doc["gripper"]["steps"]
        r.gripper = GripperTrajectory(
            [GripperPose(RigidTransform(s["rotation"], s["translation"]), s["opening_fraction"],
                         Heuristic(s["heuristic"]), s["residual"]) for s in steps],
            [s["t"] for s in steps])
    r.diagnostics = dict(doc["diagnostics"])
    return r


def load_result(path) -> ExecutionResult:
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(path)
    try:
        doc = json.loads(path.read_text())
    except ValueError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return result_from_dict(doc)


def dumps_result(result: ExecutionResult, include_timings: bool = False) -> str:
    return json.dumps(result_to_dict(result, include_timings), indent=1, sort_keys=True)


def _time_colors(n):
    """Red-to-blue RGB ramp over ``n`` steps."""
    w = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(n)
    return [(int(round(255 * (1 - x))), 0, int(round(255 * x))) for x in w]


def _ply(result: ExecutionResult) -> str:
    kps = result.live_keypoints.points if result.live_keypoints is not None else np.zeros((0, 3))
    traj = result.gripper.positions if result.gripper is not None else np.zeros((0, 3))
    lines = ["ply", "format ascii 1.0", "comment keypoints then gripper trajectory",
             f"element vertex {len(kps) + len(traj)}",
             "property double x", "property double y", "property double z",
             "property uchar red", "property uchar green", "property uchar blue",
             f"element edge {max(len(traj) - 1, 0)}", "property int vertex1", "property int vertex2",
             "end_header"]
    lines += [f"{x!r} {y!r} {z!r} 0 255 0" for x, y, z in kps.tolist()]
    lines += [f"{x!r} {y!r} {z!r} {r} {g} {b}"
              for (x, y, z), (r, g, b) in zip(traj.tolist(), _time_colors(len(traj)))]
    lines += [f"{len(kps) + i} {len(kps) + i + 1}" for i in range(len(traj) - 1)]
    return "\n".join(lines) + "\n"


def _svg(result: ExecutionResult, size=480, margin=20) -> str:
    kps = result.live_keypoints.points if result.live_keypoints is not None else np.zeros((0, 3))
    traj = result.gripper.positions if result.gripper is not None else np.zeros((0, 3))
    pts = np.vstack([kps, traj])[:, :2] if len(kps) + len(traj) else np.zeros((1, 2))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = (size - 2 * margin) / max(float((hi - lo).max()), 1e-9)

    def xy(p):
        return margin + (p[0] - lo[0]) * scale, size - margin - (p[1] - lo[1]) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">', f'<rect width="{size}" height="{size}" fill="white"/>']
    for a, b, (r, g, bl) in zip(traj[:-1], traj[1:], _time_colors(max(len(traj) - 1, 0))):
        (x1, y1), (x2, y2) = xy(a), xy(b)
        out.append(f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" '
                   f'stroke="rgb({r},{g},{bl})" stroke-width="2"/>')
    for p in kps:
        x, y = xy(p)
        out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="3" fill="green"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


EXPORT_FORMATS = ("json", "ply", "svg")


def export_result(result: ExecutionResult, out_dir, formats=("json",), stem="result",
                  include_timings: bool = False) -> list:
    unknown = set(formats) - set(EXPORT_FORMATS)
    if unknown:
        raise ValidationError(f"unknown export formats {sorted(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in EXPORT_FORMATS:
        if fmt not in formats:
            continue
        path = out_dir / f"{stem}.{fmt}"
        if fmt == "json":
            text = dumps_result(result, include_timings)
        elif fmt == "ply":
            text = _ply(result)
        else:
            text = _svg(result)
        path.write_text(text)
        written.append(path)
    return written
