"""Patch-descriptor grids, common-descriptor selection and 3D keypoint lifting."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CorruptDescriptorFileError,
    DimensionMismatchError,
    InsufficientFramesError,
    KTooLargeError,
    MissingAssetError,
    OutOfBoundsError,
    UnrepairableDepthError,
    ValidationError,
)
from .geometry import CameraIntrinsics, check_depth_map, unproject

DEFAULT_K = 10
DEPTH_REPAIR_WINDOW = 5

# similarities are compared at this many decimals so that float noise never breaks a tie
SIM_DECIMALS = 12

MAGIC = b"RXDG"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIii")


@dataclass(eq=False)
class DescriptorGrid:
    """Per-frame patch descriptors laid out row-major over a regular patch grid."""

    frame_id: int
    patch_rows: int
    patch_cols: int
    data: np.ndarray
    patch_size: int = 14
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[0] != self.patch_rows * self.patch_cols:
            raise ValidationError(
                f"descriptor data shape {self.data.shape} does not match a "
                f"{self.patch_rows}x{self.patch_cols} patch grid")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("descriptor data contains non-finite values")
        if self.patch_size <= 0:
            raise ValidationError("patch_size must be positive")
        self.origin = (int(self.origin[0]), int(self.origin[1]))

    @property
    def n_patches(self) -> int:
        return self.patch_rows * self.patch_cols

    @property
    def descriptor_dim(self) -> int:
        return self.data.shape[1]

    def patch_center(self, index) -> np.ndarray:
        """Integer pixel ``(u, v)`` at the center of patch ``index``."""
        index = np.asarray(index)
        r, c = np.divmod(index, self.patch_cols)
        half = self.patch_size // 2
        u = self.origin[0] + c * self.patch_size + half
        v = self.origin[1] + r * self.patch_size + half
        return np.stack([u, v], axis=-1)

    def normalized(self) -> np.ndarray:
        return l2_normalize(self.data)


@dataclass(eq=False)
class DescriptorSet:
    descriptors: np.ndarray
    source_frame_id: int
    patch_indices: np.ndarray
    scores: np.ndarray = field(default=None)

    def __post_init__(self):
        self.descriptors = l2_normalize(np.asarray(self.descriptors, dtype=float))
        self.patch_indices = np.asarray(self.patch_indices, dtype=int)
        if len(self.descriptors) < 1:
            raise ValidationError("a descriptor set needs at least one descriptor")
        if len(self.patch_indices) != len(self.descriptors):
            raise ValidationError("one patch index per descriptor is required")

    def __len__(self):
        return len(self.descriptors)


@dataclass(eq=False)
class KeypointSet:
    """K lifted keypoints; row i corresponds to descriptor i."""

    points: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("keypoints must be finite")

    def __len__(self):
        return len(self.points)


def l2_normalize(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / np.where(norms > 0, norms, 1.0)


def mutual_nn_votes(reference: np.ndarray, others: Sequence[np.ndarray]):
    """Commonality of each reference row across the other frames.

    Returns ``(votes, mean_similarity)``: one vote per frame in which the row
    forms a mutual nearest-neighbour pair under cosine similarity, and the mean
    of its best similarity over those frames.
    """
    votes = np.zeros(len(reference), dtype=int)
    sim_sum = np.zeros(len(reference))
    rows = np.arange(len(reference))
    for other in others:
        S = np.round(reference @ other.T, SIM_DECIMALS)
        fwd = np.argmax(S, axis=1)
        back = np.argmax(S, axis=0)
        votes += back[fwd] == rows
        sim_sum += S[rows, fwd]
    return votes, np.round(sim_sum / len(others), SIM_DECIMALS)


def select_common_descriptors(first_frames: Sequence[DescriptorGrid], k: int = DEFAULT_K,
                              scorer: Callable = mutual_nn_votes) -> DescriptorSet:
    """Pick the ``k`` descriptors of the first grid that recur most across the others.

    Candidates are ranked by vote count, then mean similarity, then lowest
    patch index.
    """
    if len(first_frames) < 2:
        raise InsufficientFramesError(f"need at least 2 frames, got {len(first_frames)}")
    ref = first_frames[0]
    for g in first_frames[1:]:
        if g.descriptor_dim != ref.descriptor_dim:
            raise DimensionMismatchError(
                f"descriptor dim {g.descriptor_dim} (frame {g.frame_id}) != {ref.descriptor_dim}")
    if not 1 <= k <= ref.n_patches:
        raise KTooLargeError(f"k={k} but the reference frame has {ref.n_patches} patches")

    reference = ref.normalized()
    votes, mean_sim = scorer(reference, [g.normalized() for g in first_frames[1:]])
    order = np.lexsort((np.arange(len(reference)), -mean_sim, -votes))[:k]
    return DescriptorSet(reference[order], ref.frame_id, order, scores=votes[order])


def locate_keypoints(descriptors: DescriptorSet, frame: DescriptorGrid) -> np.ndarray:
    """Pixel of the best-matching patch for each descriptor, shape ``(K, 2)``."""
    if descriptors.descriptors.shape[1] != frame.descriptor_dim:
        raise DimensionMismatchError(
            f"descriptor dim {descriptors.descriptors.shape[1]} != grid dim {frame.descriptor_dim}")
    S = np.round(descriptors.descriptors @ frame.normalized().T, SIM_DECIMALS)
    best = np.argmax(S, axis=1)
    return frame.patch_center(best)


def repair_depth(depth: np.ndarray, u: int, v: int, window: int = DEPTH_REPAIR_WINDOW):
    """Nearest valid depth to ``(u, v)`` inside a ``window x window`` box, or ``None``."""
    h, w = depth.shape
    r = window // 2
    best = None
    best_d2 = None
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            uu, vv = u + du, v + dv
            if 0 <= uu < w and 0 <= vv < h and depth[vv, uu] > 0:
                d2 = du * du + dv * dv
                if best_d2 is None or d2 < best_d2:
                    best, best_d2 = float(depth[vv, uu]), d2
    return best


def lift_keypoints(pixels, depth, intrinsics: CameraIntrinsics, frame_id=0,
                   window: int = DEPTH_REPAIR_WINDOW) -> KeypointSet:
    D = check_depth_map(depth)
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    points = []
    bad = []
    for i, (u, v) in enumerate(px):
        if not intrinsics.contains(u, v):
            raise OutOfBoundsError(f"keypoint {i} at ({u}, {v}) is outside the image")
        iu, iv = int(round(u)), int(round(v))
        iu, iv = min(iu, D.shape[1] - 1), min(iv, D.shape[0] - 1)
        d = D[iv, iu]
        if not d > 0:
            d = repair_depth(D, iu, iv, window)
        if d is None:
            bad.append(i)
            continue
        points.append(unproject((u, v), d, intrinsics))
    if bad:
        raise UnrepairableDepthError(bad)
    return KeypointSet(np.array(points).reshape(-1, 3), frame_id)


def write_descriptor_grid(path, grid: DescriptorGrid) -> None:
    header = _HEADER.pack(MAGIC, VERSION, grid.patch_rows, grid.patch_cols, grid.descriptor_dim,
                          grid.patch_size, grid.origin[0], grid.origin[1])
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())


def read_descriptor_header(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(path)
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise CorruptDescriptorFileError(f"{path}: truncated header")
    magic, version, rows, cols, dim, patch, ox, oy = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise CorruptDescriptorFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptDescriptorFileError(f"{path}: unsupported version {version}")
    return {"patch_rows": rows, "patch_cols": cols, "descriptor_dim": dim,
            "patch_size": patch, "origin": (ox, oy)}


def read_descriptor_grid(path, frame_id=0) -> DescriptorGrid:
    h = read_descriptor_header(path)
    payload = Path(path).read_bytes()[_HEADER.size:]
    n = h["patch_rows"] * h["patch_cols"] * h["descriptor_dim"]
    if len(payload) != 4 * n:
        raise CorruptDescriptorFileError(f"{path}: payload has {len(payload)} bytes, expected {4 * n}")
    data = np.frombuffer(payload, dtype="<f4").astype(float)
    return DescriptorGrid(frame_id, h["patch_rows"], h["patch_cols"],
                          data.reshape(h["patch_rows"] * h["patch_cols"], h["descriptor_dim"]),
                          h["patch_size"], h["origin"])
