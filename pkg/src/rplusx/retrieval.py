"""Clip retrieval through a vision-language model client, and its evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import EmptyRetrievalError, MissingAssetError, SchemaError, ValidationError
from .geometry import CameraIntrinsics
from .gripper import Heuristic
from .hands import PresenceTimeline, filter_hand_frames
from .transport import DEFAULT_RETRIES, api_key_from_env, post_json

DEFAULT_TOLERANCE_S = 3.0
VLM_API_KEY_ENV = "RX_VLM_API_KEY"

# seconds; absorbs float noise in span arithmetic and tolerance comparisons
TIME_EPS = 1e-9

KEYWORD_HEURISTICS = (
    (("press", "turn on", "switch on", "turn off", "switch off", "plug"), Heuristic.PRESS),
    (("push", "close"), Heuristic.PUSH),
)


@dataclass(frozen=True)
class FrameAssets:
    t: int
    depth: Path | None = None
    descriptors: Path | None = None
    hands: Path | None = None
    rgb: Path | None = None
    mask: Path | None = None
    tracks: Path | None = None


@dataclass(eq=False)
class Recording:
    recording_id: str
    fps: float
    intrinsics: CameraIntrinsics
    frames: list
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if not self.fps > 0:
            raise ValidationError("fps must be positive")
        ts = [f.t for f in self.frames]
        if ts != list(range(len(ts))):
            raise ValidationError("recording frame indices must be contiguous from 0")

    def __len__(self):
        return len(self.frames)

    @property
    def duration(self) -> float:
        return len(self.frames) / self.fps

    @property
    def frame_ids(self) -> list:
        return list(range(len(self.frames)))

    def frame(self, t) -> FrameAssets:
        return self.frames[t]


@dataclass(eq=False)
class RecordingView:
    """A recording restricted to a subset of frames, played back-to-back.

    ``kept`` lists the original frame index of each frame of the view.
    """

    recording: Recording
    kept: np.ndarray
    intervals: list = field(default_factory=list)

    def __post_init__(self):
        self.kept = np.asarray(self.kept, dtype=int)

    def __len__(self):
        return len(self.kept)

    @property
    def recording_id(self):
        return self.recording.recording_id

    @property
    def fps(self):
        return self.recording.fps

    @property
    def intrinsics(self):
        return self.recording.intrinsics

    @property
    def duration(self) -> float:
        return len(self.kept) / self.fps

    @property
    def frames(self) -> list:
        return [self.recording.frames[i] for i in self.kept]

    def to_original_time(self, t: float) -> float:
        if not 0 <= t <= self.duration + TIME_EPS:
            raise ValidationError(f"time {t} outside the filtered timeline [0, {self.duration}]")
        if len(self.kept) == 0:
            raise ValidationError("empty view has no timeline")
        pos = t * self.fps
        i = min(int(math.floor(pos + TIME_EPS)), len(self.kept) - 1)
        return (self.kept[i] + (pos - i)) / self.fps

    def to_filtered_time(self, t: float) -> float:
        pos = t * self.fps
        frame = int(math.floor(pos + TIME_EPS))
        i = int(np.searchsorted(self.kept, frame))
        if i >= len(self.kept) or self.kept[i] != frame:
            raise ValidationError(f"original time {t} falls in a removed frame")
        return (i + (pos - frame)) / self.fps

    def original_frames(self, span: "ClipSpan") -> list:
        return [int(self.kept[i]) for i in span.frame_range(self.fps, len(self.kept))]


@dataclass(frozen=True)
class ClipSpan:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)) or not self.start_s < self.end_s:
            raise ValidationError(f"invalid span ({self.start_s}, {self.end_s})")

    def frame_range(self, fps: float, n_frames: int | None = None) -> range:
        """Frames whose timestamp lies in ``[start_s, end_s)``."""
        first = max(int(math.ceil(self.start_s * fps - TIME_EPS)), 0)
        stop = int(math.ceil(self.end_s * fps - TIME_EPS))
        if n_frames is not None:
            stop = min(stop, n_frames)
        return range(first, stop)

    def as_list(self) -> list:
        return [self.start_s, self.end_s]


@dataclass(frozen=True)
class Command:
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValidationError("command text must be nonempty")

    def __str__(self):
        return self.text


@runtime_checkable
class VlmClient(Protocol):
    deterministic: bool

    def retrieve(self, recording, command: Command) -> list: ...

    def classify_heuristic(self, command: Command) -> Heuristic: ...


def keyword_heuristic(text: str) -> Heuristic:
    lowered = text.lower()
    for words, kind in KEYWORD_HEURISTICS:
        if any(w in lowered for w in words):
            return kind
    return Heuristic.GRASP


class MockVlmClient:
    """Scripted client: command text -> spans and optional heuristic."""

    deterministic = True
    name = "mock"

    def __init__(self, script: dict | None = None):
        self.script = {}
        for text, entry in (script or {}).items():
            if isinstance(entry, list):
                entry = {"spans": entry}
            self.script[text.strip().lower()] = entry

    @classmethod
    def from_file(cls, path) -> "MockVlmClient":
        path = Path(path)
        if not path.is_file():
            raise MissingAssetError(path)
        try:
            return cls(json.loads(path.read_text()))
        except ValueError as exc:
            raise SchemaError(f"{path}: malformed VLM script ({exc})") from exc

    def _entry(self, command) -> dict:
        return self.script.get(str(command).strip().lower(), {})

    def retrieve(self, recording, command) -> list:
        return [tuple(s) for s in self._entry(command).get("spans", [])]

    def classify_heuristic(self, command) -> Heuristic:
        kind = self._entry(command).get("heuristic")
        return Heuristic(kind) if kind else keyword_heuristic(str(command))


class HttpVlmClient:
    """Live client posting text plus media references to a JSON endpoint.

    Expected responses: ``{"spans": [[start_s, end_s], ...]}`` for retrieval
    and ``{"heuristic": "grasp" | "press" | "push"}`` for classification.
    """

    deterministic = False
    name = "http"

    def __init__(self, endpoint, api_key=None, model=None, retries=DEFAULT_RETRIES, session=None,
                 sleep=None):
        self.endpoint = endpoint
        self.api_key = api_key or api_key_from_env(VLM_API_KEY_ENV)
        self.model = model
        self.retries = retries
        self.session = session
        self._sleep = sleep

    def _post(self, payload):
        kwargs = {"sleep": self._sleep} if self._sleep else {}
        if self.model:
            payload = {"model": self.model, **payload}
        return post_json(self.endpoint, payload, self.api_key, self.retries, session=self.session, **kwargs)

    def retrieve(self, recording, command) -> list:
        media = [str(f.rgb) for f in recording.frames if f.rgb is not None]
        payload = {
            "task": "retrieve_clips",
            "command": str(command),
            "instruction": ("Return the starting and ending second of every clip in this video "
                            f"in which the person performs: {command}"),
            "recording": {"id": recording.recording_id, "fps": recording.fps,
                          "duration_s": recording.duration, "media": media},
        }
        body = self._post(payload)
        try:
            return [(float(s), float(e)) for s, e in body["spans"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed retrieval response: {body!r}") from exc

    def classify_heuristic(self, command) -> Heuristic:
        body = self._post({"task": "classify_heuristic", "command": str(command),
                           "choices": [h.value for h in Heuristic]})
        try:
            return Heuristic(str(body["heuristic"]).strip().lower())
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"malformed classification response: {body!r}") from exc


def clean_spans(raw_spans, duration: float) -> list:
    """Clamp to ``[0, duration]``, drop empty spans, sort, merge overlaps."""
    spans = []
    for s, e in raw_spans:
        s, e = max(float(s), 0.0), min(float(e), duration)
        if math.isfinite(s) and math.isfinite(e) and e - s > TIME_EPS:
            spans.append([s, e])
    spans.sort()
    merged = []
    for s, e in spans:
        if merged and s < merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [ClipSpan(s, e) for s, e in merged]


def retrieve_clips(client: VlmClient, recording, command) -> list:
    command = command if isinstance(command, Command) else Command(command)
    spans = clean_spans(client.retrieve(recording, command), recording.duration)
    if not spans:
        raise EmptyRetrievalError(f"no clips retrieved for {command.text!r}")
    return spans


def select_heuristic(client: VlmClient, command) -> Heuristic:
    command = command if isinstance(command, Command) else Command(command)
    return Heuristic(client.classify_heuristic(command))


class RetrievalScore(NamedTuple):
    precision: float | None
    recall: float | None
    matches: int


def spans_match(a, b, tolerance_s: float) -> bool:
    return (abs(a[0] - b[0]) <= tolerance_s + TIME_EPS) and (abs(a[1] - b[1]) <= tolerance_s + TIME_EPS)


def _pairs(spans) -> list:
    return [s.as_list() if isinstance(s, ClipSpan) else [float(s[0]), float(s[1])] for s in spans]


def evaluate_retrieval(predicted: Sequence, ground_truth: Sequence,
                       tolerance_s: float = DEFAULT_TOLERANCE_S) -> RetrievalScore:
    """Precision and recall under one-to-one matching.

    A predicted span matches a ground-truth span when both its start and end
    differ by at most ``tolerance_s``.  The number of matches is the maximum
    cardinality matching.  A metric whose denominator is zero is ``None``.
    """
    if tolerance_s < 0:
        raise ValidationError("tolerance must be non-negative")
    pred, gt = sorted(_pairs(predicted)), sorted(_pairs(ground_truth))
    matches = 0
    if pred and gt:
        adj = np.array([[spans_match(p, g, tolerance_s) for g in gt] for p in pred])
        assignment = maximum_bipartite_matching(csr_matrix(adj.astype(np.int8)), perm_type="column")
        matches = int(np.sum(assignment >= 0))
    precision = matches / len(pred) if pred else None
    recall = matches / len(gt) if gt else None
    return RetrievalScore(precision, recall, matches)


def mean_scores(scores: Sequence[RetrievalScore]) -> tuple:
    """Mean precision and recall over tasks, skipping undefined values."""
    out = []
    for attr in ("precision", "recall"):
        vals = [getattr(s, attr) for s in scores if getattr(s, attr) is not None]
        out.append(float(np.mean(vals)) if vals else None)
    return tuple(out)


def segment_by_presence(recording: Recording, timeline, min_gap: int = 1) -> RecordingView:
    present = timeline.present if isinstance(timeline, PresenceTimeline) else np.asarray(timeline, dtype=bool)
    if len(present) != len(recording):
        raise ValidationError(f"timeline has {len(present)} frames, recording has {len(recording)}")
    intervals = filter_hand_frames(present, min_gap)
    kept = [i for a, b in intervals for i in range(a, b + 1)]
    return RecordingView(recording, np.array(kept, dtype=int), intervals)


def load_annotations(path) -> dict:
    """Ground truth ``{task: [[start_s, end_s], ...]}``."""
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(path)
    try:
        doc = json.loads(path.read_text())
        return {str(k): [(float(s), float(e)) for s, e in v] for k, v in doc.items()}
    except (AttributeError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed annotations ({exc})") from exc
