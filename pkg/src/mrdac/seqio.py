"""On-disk sequence directories.

A sequence directory holds ``meta.json``, one file per frame and optionally
``keypoints.json``::

    meta.json           {"width", "height", "fps", "format", "frames": [indices]}
    frame_00012.png     8-bit RGB
    frame_00012.f32     raw planar float32, little-endian: R plane, G plane,
                        B plane, each H rows of W samples
    keypoints.json      [{"frame_index", "positions": [[x, y], ...],
                          "jacobians": [[[a, b], [c, d]], ...] | null}, ...]
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from PIL import Image

from .errors import DimensionError, InvalidInputError
from .motion import KeypointSet

FORMATS = ("png", "f32")
META = "meta.json"
KEYPOINTS = "keypoints.json"


def frame_path(directory: Path, index: int, fmt: str) -> Path:
    return Path(directory) / f"frame_{index:05d}.{fmt}"


def write_frame(path: Path, frame: np.ndarray, fmt: str) -> None:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DimensionError(f"frame must be (H, W, 3), got {frame.shape}")
    if fmt == "png":
        data = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    elif fmt == "f32":
        np.moveaxis(frame, -1, 0).astype("<f4").tofile(path)
    else:
        raise InvalidInputError(f"unknown frame format {fmt!r}")


def read_frame(path: Path, fmt: str, height: int, width: int) -> np.ndarray:
    if fmt == "png":
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        if data.shape != (height, width, 3):
            raise DimensionError(f"{path}: expected {height}x{width}, got {data.shape[:2]}")
        return data
    if fmt == "f32":
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != 3 * height * width:
            raise DimensionError(f"{path}: expected {3 * height * width} samples, got {raw.size}")
        return np.moveaxis(raw.reshape(3, height, width), 0, -1).astype(np.float64)
    raise InvalidInputError(f"unknown frame format {fmt!r}")


def keypoints_to_json(kp: KeypointSet) -> dict:
    return {
        "frame_index": kp.frame_index,
        "positions": kp.positions.tolist(),
        "jacobians": None if kp.jacobians is None else kp.jacobians.tolist(),
    }


def keypoints_from_json(obj: dict) -> KeypointSet:
    jac = obj.get("jacobians")
    return KeypointSet(int(obj["frame_index"]), np.array(obj["positions"], dtype=np.float64),
                       None if jac is None else np.array(jac, dtype=np.float64))


def write_sequence_dir(directory, frames: Mapping[int, np.ndarray], fps: float, fmt: str = "png",
                       keypoints: Optional[list] = None) -> None:
    """Write ``frames`` (index -> frame) plus metadata into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    indices = sorted(frames)
    if not indices:
        raise InvalidInputError("no frames to write")
    h, w, _ = np.asarray(frames[indices[0]]).shape
    for t in indices:
        write_frame(frame_path(directory, t, fmt), frames[t], fmt)
    meta = {"width": w, "height": h, "fps": fps, "format": fmt, "frames": indices}
    (directory / META).write_text(json.dumps(meta, indent=1) + "\n")
    if keypoints is not None:
        payload = [keypoints_to_json(k) for k in keypoints]
        (directory / KEYPOINTS).write_text(json.dumps(payload) + "\n")


def read_meta(directory) -> dict:
    path = Path(directory) / META
    meta = json.loads(path.read_text())
    for key in ("width", "height", "fps", "format", "frames"):
        if key not in meta:
            raise InvalidInputError(f"{path}: missing {key!r}")
    if meta["format"] not in FORMATS:
        raise InvalidInputError(f"{path}: unknown format {meta['format']!r}")
    return meta


def read_frames(directory, indices=None) -> dict:
    """Frames of a sequence directory as ``{index: (H, W, 3) float64}``."""
    meta = read_meta(directory)
    wanted = meta["frames"] if indices is None else list(indices)
    missing = sorted(set(wanted) - set(meta["frames"]))
    if missing:
        raise InvalidInputError(f"{directory}: frames {missing} not present")
    return {t: read_frame(frame_path(directory, t, meta["format"]), meta["format"],
                          meta["height"], meta["width"]) for t in wanted}


def read_keypoints(directory) -> list:
    path = Path(directory) / KEYPOINTS
    return [keypoints_from_json(o) for o in json.loads(path.read_text())]
