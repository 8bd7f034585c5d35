"""In-context trajectory generation from (keypoints -> hand trajectory) examples.

Prompt grammar (ASCII, spaces allowed between tokens)::

    prompt     = header NL { "in:" points NL "out:" trajectory NL } "in:" points NL "out:" ;
    header     = "RXP1" " q=" number " k=" int " z=" int " j=" int " joints=" name { "," name } ;
    points     = triple { ";" triple } ;
    trajectory = "<" points { "|" points } ">" ;
    triple     = int "," int "," int ;
    int        = [ "-" ] digit { digit } ;

Every coordinate is written as an integer multiple of the quantum ``q``
(meters), rounded half away from zero.  A completion is parsed as a single
``trajectory``; text after the closing ``>`` is ignored with a warning.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .descriptors import KeypointSet
from .errors import (
    DegenerateConfigurationError,
    DegenerateKeypointsError,
    EmptyContextError,
    GenerationFailedError,
    KMismatchError,
    MalformedOutputError,
    ValidationError,
    WrongArityError,
)
from .geometry import RigidTransform, alignment_rms, estimate_rigid_transform, rotation_about_axis
from .hands import HandTrajectory
from .transport import DEFAULT_RETRIES, api_key_from_env, post_json

log = logging.getLogger(__name__)

DEFAULT_QUANTUM = 0.001
DEFAULT_MAX_STEPS = 40
DEFAULT_GENERATION_RETRIES = 2
LLM_API_KEY_ENV = "RX_LLM_API_KEY"

# residuals are compared at this resolution so float noise never decides a tie
_RMS_DECIMALS = 12


@dataclass(eq=False)
class ContextExample:
    keypoints: KeypointSet
    trajectory: HandTrajectory

    def transformed(self, T: RigidTransform) -> "ContextExample":
        return ContextExample(KeypointSet(T.apply(self.keypoints.points), self.keypoints.frame_id),
                              self.trajectory.map_points(T.apply))

    def shifted(self, offset) -> "ContextExample":
        offset = np.asarray(offset, dtype=float)
        return ContextExample(KeypointSet(self.keypoints.points + offset, self.keypoints.frame_id),
                              self.trajectory.map_points(lambda p: p + offset))


@dataclass
class SerializedPrompt:
    text: str
    metadata: dict = field(default_factory=dict)


@dataclass
class GenerationConfig:
    quantum: float = DEFAULT_QUANTUM
    retries: int = DEFAULT_GENERATION_RETRIES
    max_steps: int = DEFAULT_MAX_STEPS
    context_budget: int | None = None


@dataclass(eq=False)
class GenerationResult:
    trajectory: HandTrajectory
    fallback_used: bool
    backend: str
    attempts: int
    residual_rms: float | None = None
    selected_example: int | None = None


def quantize(x, quantum: float) -> np.ndarray:
    """Round ``x / quantum`` half away from zero."""
    y = np.asarray(x, dtype=float) / quantum
    return (np.sign(y) * np.floor(np.abs(y) + 0.5)).astype(np.int64)


def dequantize(q, quantum: float) -> np.ndarray:
    return np.asarray(q, dtype=float) * quantum


def _format_points(q) -> str:
    return ";".join(f"{a},{b},{c}" for a, b, c in np.asarray(q).reshape(-1, 3).tolist())


def format_trajectory(positions, quantum: float) -> str:
    """Render a ``(T, J, 3)`` joint array in the trajectory grammar."""
    q = quantize(positions, quantum)
    return "<" + "|".join(_format_points(frame) for frame in q) + ">"


def serialize_context(examples: Sequence[ContextExample], live: KeypointSet,
                      quantum: float = DEFAULT_QUANTUM) -> SerializedPrompt:
    if not examples:
        raise EmptyContextError("at least one context example is required")
    if not quantum > 0:
        raise ValidationError("quantum must be positive")
    k = len(live)
    names = examples[0].trajectory.names
    for i, ex in enumerate(examples):
        if len(ex.keypoints) != k:
            raise KMismatchError(f"example {i} has K={len(ex.keypoints)}, live has K={k}")
        if ex.trajectory.names != names:
            raise ValidationError(f"example {i} carries different joints")
    lines = [f"RXP1 q={quantum!r} k={k} z={len(examples)} j={len(names)} joints={','.join(names)}"]
    for ex in examples:
        lines.append("in: " + _format_points(quantize(ex.keypoints.points, quantum)))
        lines.append("out: " + format_trajectory(ex.trajectory.positions(), quantum))
    lines.append("in: " + _format_points(quantize(live.points, quantum)))
    lines.append("out:")
    meta = {"K": k, "Z": len(examples), "lengths": [len(ex.trajectory) for ex in examples],
            "quantum": quantum, "joints": list(names)}
    return SerializedPrompt("\n".join(lines), meta)


class _Scanner:
    _INT = re.compile(r"-?\d+")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def offset(self) -> int:
        return len(self.text[:self.pos].encode())

    def fail(self, message):
        raise MalformedOutputError(message, self.offset())

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            got = repr(self.peek()) if self.peek() else "end of output"
            self.fail(f"expected {ch!r}, got {got}")
        self.pos += 1

    def integer(self) -> int:
        self.skip_ws()
        m = self._INT.match(self.text, self.pos)
        if not m:
            self.fail("expected an integer" if self.pos < len(self.text) else "output ends inside a triple")
        self.pos = m.end()
        return int(m.group())

    def triple(self) -> list:
        a = self.integer()
        self.expect(",")
        b = self.integer()
        self.expect(",")
        c = self.integer()
        return [a, b, c]

    def points(self) -> list:
        out = [self.triple()]
        while self.peek() == ";":
            self.pos += 1
            out.append(self.triple())
        return out

    def trajectory(self) -> list:
        self.expect("<")
        frames = [self.points()]
        while self.peek() == "|":
            self.pos += 1
            frames.append(self.points())
        self.expect(">")
        return frames


def _parse_trajectory_ints(raw: str, expected_joints: int) -> np.ndarray:
    sc = _Scanner(raw)
    frames = sc.trajectory()
    for i, f in enumerate(frames):
        if len(f) != expected_joints:
            raise WrongArityError(f"frame {i} has {len(f)} joints, expected {expected_joints}")
    rest = raw[sc.pos:].strip()
    if rest:
        log.warning("ignoring %d characters after the trajectory", len(rest))
    return np.array(frames, dtype=np.int64)


def parse_trajectory(raw: str, expected_joints: int, quantum: float = DEFAULT_QUANTUM,
                     names=None, clip_id=None) -> HandTrajectory:
    q = _parse_trajectory_ints(raw, expected_joints)
    names = tuple(names) if names is not None else tuple(f"joint_{i}" for i in range(expected_joints))
    if len(names) != expected_joints:
        raise ValidationError("names must match expected_joints")
    return HandTrajectory.from_array(dequantize(q, quantum), names, clip_id=clip_id)


_HEADER = re.compile(r"RXP1 q=(\S+) k=(\d+) z=(\d+) j=(\d+) joints=(\S+)")


def parse_prompt(text: str) -> dict:
    """Inverse of :func:`serialize_context`, returning dequantized arrays."""
    lines = text.split("\n")
    m = _HEADER.fullmatch(lines[0].strip()) if lines else None
    if not m:
        raise MalformedOutputError("bad prompt header", 0)
    quantum, k, z, j = float(m.group(1)), int(m.group(2)), int(m.group(3)), int(m.group(4))
    names = tuple(m.group(5).split(","))
    body = lines[1:]
    if len(body) != 2 * z + 2:
        raise MalformedOutputError(f"expected {2 * z + 2} body lines, got {len(body)}", len(lines[0]) + 1)

    def points(line, prefix):
        if not line.startswith(prefix):
            raise MalformedOutputError(f"expected {prefix!r}", 0)
        sc = _Scanner(line[len(prefix):])
        pts = np.array(sc.points(), dtype=np.int64)
        if len(pts) != k:
            raise KMismatchError(f"keypoint line has {len(pts)} points, header says {k}")
        return dequantize(pts, quantum)

    examples = []
    for i in range(z):
        kp = points(body[2 * i], "in:")
        out = body[2 * i + 1]
        if not out.startswith("out:"):
            raise MalformedOutputError("expected 'out:'", 0)
        examples.append((kp, dequantize(_parse_trajectory_ints(out[4:], j), quantum)))
    live = points(body[-2], "in:")
    return {"quantum": quantum, "names": names, "examples": examples, "live": live}


@dataclass
class Denormalizer:
    """Maps trajectories from the normalized live frame back to the live camera frame."""

    offset: np.ndarray

    def __call__(self, traj: HandTrajectory) -> HandTrajectory:
        return traj.map_points(lambda p: p + self.offset)


def normalize_frame(examples: Sequence[ContextExample], live: KeypointSet):
    """Center every example and the live set on its own keypoint centroid."""
    if len(live) < 1:
        raise ValidationError("need at least one live keypoint")
    out = [ex.shifted(-ex.keypoints.points.mean(axis=0)) for ex in examples]
    c = live.points.mean(axis=0)
    return out, KeypointSet(live.points - c, live.frame_id), Denormalizer(c)


def augment(example: ContextExample, seed: int, translation_range: float = 0.0,
            rotation_range: float = 0.0) -> ContextExample:
    """Apply one random rigid motion to the keypoints and the whole trajectory."""
    if translation_range < 0 or rotation_range < 0:
        raise ValidationError("augmentation ranges must be non-negative")
    rng = np.random.default_rng(seed)
    t = rng.uniform(-translation_range, translation_range, size=3) if translation_range > 0 else np.zeros(3)
    axis = rng.normal(size=3)
    angle = rng.uniform(-rotation_range, rotation_range) if rotation_range > 0 else 0.0
    R = rotation_about_axis(axis, angle) if angle else np.eye(3)
    return example.transformed(RigidTransform(R, t))


def rank_examples(examples: Sequence[ContextExample], live: KeypointSet):
    """Rigidly align every example to the live keypoints.

    Returns ``(best_index, transforms, rms)``; ties go to the lowest index.
    """
    if not examples:
        raise EmptyContextError("at least one context example is required")
    transforms, rms = [], []
    for i, ex in enumerate(examples):
        if len(ex.keypoints) != len(live):
            raise KMismatchError(f"example {i} has K={len(ex.keypoints)}, live has K={len(live)}")
        try:
            T = estimate_rigid_transform(ex.keypoints.points, live.points)
        except DegenerateConfigurationError as exc:
            raise DegenerateKeypointsError(f"example {i}: {exc}") from exc
        transforms.append(T)
        rms.append(alignment_rms(T, ex.keypoints.points, live.points))
    try:
        estimate_rigid_transform(live.points, live.points)
    except DegenerateConfigurationError as exc:
        raise DegenerateKeypointsError(f"live keypoints: {exc}") from exc
    rms = np.array(rms)
    best = int(np.argmin(np.round(rms, _RMS_DECIMALS)))
    return best, transforms, rms


def nearest_context_warp(examples: Sequence[ContextExample], live: KeypointSet) -> HandTrajectory:
    """Transport the best-aligning example's trajectory into the live frame."""
    best, transforms, _ = rank_examples(examples, live)
    return examples[best].trajectory.map_points(transforms[best].apply)


@runtime_checkable
class SequenceBackend(Protocol):
    name: str
    deterministic: bool

    def complete(self, prompt: SerializedPrompt) -> str: ...


class EchoNearestBackend:
    """Deterministic text backend: answers a prompt with the nearest-context warp."""

    name = "echo-nearest"
    deterministic = True

    def complete(self, prompt: SerializedPrompt) -> str:
        doc = parse_prompt(prompt.text)
        names = doc["names"]
        examples = [ContextExample(KeypointSet(kp), HandTrajectory.from_array(traj, names))
                    for kp, traj in doc["examples"]]
        traj = nearest_context_warp(examples, KeypointSet(doc["live"]))
        return format_trajectory(traj.positions(), doc["quantum"])


class HttpLlmBackend:
    """Completion endpoint speaking ``{"prompt": ...}`` -> ``{"text": ...}``."""

    name = "llm"
    deterministic = False

    def __init__(self, endpoint, api_key=None, model=None, max_tokens=4096, retries=DEFAULT_RETRIES,
                 session=None, sleep=None):
        self.endpoint = endpoint
        self.api_key = api_key or api_key_from_env(LLM_API_KEY_ENV, "RX_VLM_API_KEY")
        self.model = model
        self.max_tokens = max_tokens
        self.retries = retries
        self.session = session
        self._sleep = sleep

    def complete(self, prompt: SerializedPrompt) -> str:
        payload = {"prompt": prompt.text, "max_tokens": self.max_tokens, "temperature": 0.0}
        if self.model:
            payload["model"] = self.model
        kwargs = {"sleep": self._sleep} if self._sleep else {}
        body = post_json(self.endpoint, payload, self.api_key, self.retries, session=self.session, **kwargs)
        text = body.get("text", body.get("completion")) if isinstance(body, dict) else None
        if not isinstance(text, str):
            raise MalformedOutputError("completion response has no text", 0)
        return text


def generate_trajectory(backend: SequenceBackend, examples: Sequence[ContextExample], live: KeypointSet,
                        config: GenerationConfig | None = None) -> GenerationResult:
    """normalize -> serialize -> complete -> parse -> denormalize, with a baseline fallback."""
    config = config or GenerationConfig()
    if not examples:
        raise EmptyContextError("at least one context example is required")
    if config.context_budget is not None:
        examples = list(examples)[:config.context_budget]
    norm_examples, norm_live, denorm = normalize_frame(examples, live)
    prompt = serialize_context(norm_examples, norm_live, config.quantum)
    names = examples[0].trajectory.names

    attempts = 0
    for attempts in range(1, config.retries + 2):
        raw = backend.complete(prompt)
        try:
            traj = parse_trajectory(raw, len(names), config.quantum, names)
        except (MalformedOutputError, WrongArityError) as exc:
            log.warning("backend %s attempt %d unparseable: %s", backend.name, attempts, exc)
            continue
        if len(traj) > config.max_steps:
            traj = HandTrajectory(traj.clip_id, traj.frames[:config.max_steps])
        return GenerationResult(denorm(traj), False, backend.name, attempts)

    log.warning("backend %s failed %d times, using the nearest-context baseline", backend.name, attempts)
    try:
        best, transforms, rms = rank_examples(examples, live)
    except DegenerateKeypointsError as exc:
        raise GenerationFailedError(f"backend output unusable and baseline failed: {exc}") from exc
    traj = examples[best].trajectory.map_points(transforms[best].apply)
    return GenerationResult(traj, True, backend.name, attempts, float(rms[best]), best)
