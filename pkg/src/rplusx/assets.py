"""Depth map file readers and writers.

Depth is stored either as ``.npy`` float meters or as a 16-bit PNG in
millimeters; in both cases 0 marks an invalid reading.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MissingAssetError, ValidationError
from .geometry import check_depth_map

DEPTH_PNG_SCALE = 1000.0


def read_depth(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingAssetError(path)
    if path.suffix == ".npy":
        return check_depth_map(np.load(path))
    if path.suffix == ".png":
        with Image.open(path) as im:
            return check_depth_map(np.asarray(im, dtype=float) / DEPTH_PNG_SCALE)
    raise ValidationError(f"{path}: unsupported depth format {path.suffix!r}")


def write_depth(path, depth) -> None:
    path = Path(path)
    D = check_depth_map(depth)
    if path.suffix == ".npy":
        np.save(path, D)
    elif path.suffix == ".png":
        mm = np.rint(D * DEPTH_PNG_SCALE)
        if mm.max(initial=0) > 65535:
            raise ValidationError("depth exceeds the 16-bit PNG range")
        Image.fromarray(mm.astype(np.uint16)).save(path)
    else:
        raise ValidationError(f"{path}: unsupported depth format {path.suffix!r}")
