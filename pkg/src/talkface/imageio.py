"""Numbered frame images: binary PPM/PGM (8 or 16 bit) and PNG via Pillow."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

_FRAME_RE = re.compile(r"^(?P<prefix>.*?)_?(?P<num>\d+)\.(?P<ext>ppm|pgm|png)$")
IMAGE_EXTS = (".ppm", ".pgm", ".png")


def _read_token(data: bytes, pos: int):
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def _read_pnm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported netpbm magic {magic!r}")
    w, pos = _read_token(data, pos)
    h, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    pos += 1  # single whitespace after maxval
    ch = 3 if magic == b"P6" else 1
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h * ch
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return arr.reshape(h, w, ch).astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    """Return an H x W x C float64 image in [0, 1] (C = 1 for gray, 3 for colour)."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such image")
    if path.suffix.lower() in (".ppm", ".pgm"):
        return _read_pnm(path)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.float64)[..., None] / 65535.0
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr[..., None] if arr.ndim == 2 else arr


def write_image(path, image, bits: int = 8) -> None:
    """Write a [0, 1] image; the extension selects PPM/PGM/PNG. Values are clipped."""
    path = Path(path)
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] != 3):
        raise FormatError(f"cannot write image of shape {a.shape}")
    maxval = 255 if bits == 8 else 65535
    q = np.round(np.clip(a, 0.0, 1.0) * maxval)
    path.parent.mkdir(parents=True, exist_ok=True)
    ext = path.suffix.lower()
    if ext in (".ppm", ".pgm"):
        if (ext == ".ppm") != (a.ndim == 3):
            raise FormatError(f"{path}: PPM needs colour, PGM needs gray")
        magic = b"P6" if a.ndim == 3 else b"P5"
        h, w = a.shape[:2]
        body = q.astype(">u2" if bits == 16 else "u1").tobytes()
        path.write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + body)
    elif ext == ".png":
        if bits == 16:
            if a.ndim == 3:
                raise FormatError("16-bit PNG is only supported for gray images")
            Image.fromarray(q.astype(np.uint16)).save(path)
        else:
            Image.fromarray(q.astype(np.uint8)).save(path)
    else:
        raise FormatError(f"{path}: unknown image extension")


def write_mask(path, mask) -> None:
    write_image(path, np.asarray(mask, dtype=np.float64), bits=8)


def read_mask(path) -> np.ndarray:
    return read_image(path)[..., 0] > 0.5


def frame_name(prefix: str, index: int, ext: str = "ppm") -> str:
    return f"{prefix}_{index:05d}.{ext}"


def list_frames(directory, prefix: str | None = None) -> list[Path]:
    """Numbered images in ``directory`` sorted by frame number.

    With no ``prefix``, every numbered image except ``mask_*`` files is
    returned; mixing several prefixes is an error.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"{directory}: not a directory")
    found = []
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if not m:
            continue
        pre = m.group("prefix")
        if prefix is None and pre == "mask":
            continue
        if prefix is not None and pre != prefix:
            continue
        found.append((pre, int(m.group("num")), p))
    prefixes = {f[0] for f in found}
    if len(prefixes) > 1:
        raise FormatError(f"{directory}: several frame prefixes {sorted(prefixes)}; pass one explicitly")
    return [p for _, _, p in sorted(found, key=lambda f: f[1])]


def write_frames(directory, images, prefix: str = "frame", ext: str = "ppm", bits: int = 8) -> list[Path]:
    directory = Path(directory)
    paths = []
    for i, img in enumerate(images):
        p = directory / frame_name(prefix, i, ext)
        write_image(p, img, bits)
        paths.append(p)
    return paths
