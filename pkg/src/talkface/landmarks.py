"""Landmark frames and the binary / CSV landmark stream formats.

Binary stream layout (little endian)::

    magic   8 bytes  b"TFLANDMK"
    version uint32   1
    count   uint32   vertices per frame (468)
    records          count*3 float32 (x, y, z per vertex) + float64 timestamp
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .topology import VERTEX_COUNT

MAGIC = b"TFLANDMK"
VERSION = 1
_HEADER = struct.Struct("<8sII")


@dataclass
class LandmarkFrame:
    vertices: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.shape != (VERTEX_COUNT, 3):
            raise ShapeError(f"expected {VERTEX_COUNT}x3 vertices, got {self.vertices.shape}")
        if not np.all(np.isfinite(self.vertices)):
            raise ShapeError("landmark coordinates must be finite")
        self.timestamp = float(self.timestamp)


def write_landmarks(frames, path) -> None:
    rec_dtype = np.dtype([("v", "<f4", (VERTEX_COUNT * 3,)), ("t", "<f8")])
    recs = np.zeros(len(frames), dtype=rec_dtype)
    for i, f in enumerate(frames):
        recs[i]["v"] = f.vertices.reshape(-1)
        recs[i]["t"] = f.timestamp
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, VERTEX_COUNT))
        fh.write(recs.tobytes())


def read_landmarks(path) -> list[LandmarkFrame]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated landmark header")
    magic, version, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a landmark stream")
    if version != VERSION or count != VERTEX_COUNT:
        raise FormatError(f"{path}: unsupported version {version} / vertex count {count}")
    rec_dtype = np.dtype([("v", "<f4", (count * 3,)), ("t", "<f8")])
    body = data[_HEADER.size:]
    if len(body) % rec_dtype.itemsize:
        raise FormatError(f"{path}: trailing partial record")
    recs = np.frombuffer(body, dtype=rec_dtype)
    return [LandmarkFrame(r["v"].reshape(count, 3).astype(np.float64), float(r["t"])) for r in recs]


def read_landmarks_csv(path) -> list[LandmarkFrame]:
    """Rows of ``timestamp, x0, y0, z0, x1, ...``; a non-numeric header row is skipped."""
    frames = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                vals = [float(x) for x in row]
            except ValueError:
                if frames:
                    raise FormatError(f"{path}: non-numeric row after data") from None
                continue
            if len(vals) != 1 + VERTEX_COUNT * 3:
                raise FormatError(f"{path}: expected {1 + VERTEX_COUNT * 3} columns, got {len(vals)}")
            frames.append(LandmarkFrame(np.reshape(vals[1:], (VERTEX_COUNT, 3)), vals[0]))
    return frames


def write_landmarks_csv(frames, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["timestamp"] + [f"{a}{i}" for i in range(VERTEX_COUNT) for a in "xyz"]
        w.writerow(header)
        for f in frames:
            w.writerow([repr(f.timestamp)] + [repr(float(x)) for x in f.vertices.ravel()])


def load_landmark_stream(path) -> list[LandmarkFrame]:
    if str(path).lower().endswith(".csv"):
        return read_landmarks_csv(path)
    return read_landmarks(path)
