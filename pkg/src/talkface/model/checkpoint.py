"""Versioned binary checkpoints and CSV loss histories."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError
from .networks import ModelConfig, TalkingFaceModel

MAGIC = b"TFMODEL\x00"
VERSION = 1
_HEADER = struct.Struct("<8sII")


def save_checkpoint(model: TalkingFaceModel, path, meta: dict | None = None) -> None:
    """Header, JSON architecture descriptor, then float32 little-endian tensors in descriptor order."""
    state = model.state_dict()
    names = sorted(state)
    desc = {
        "config": model.cfg.to_dict(),
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
        "parameter_count": model.parameter_count(),
        "meta": meta or {},
    }
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        f.write(blob)
        for n in names:
            f.write(state[n].detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path, dtype=torch.float32):
    """Returns (model, meta)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, n = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a talkface checkpoint")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = _HEADER.size
    desc = json.loads(data[off:off + n].decode("utf-8"))
    off += n
    model = TalkingFaceModel(ModelConfig.from_dict(desc["config"])).to(dtype)
    state = {}
    for t in desc["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        if off + 4 * count > len(data):
            raise FormatError(f"{path}: truncated tensor {t['name']}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(t["shape"])
        state[t["name"]] = torch.as_tensor(arr.copy(), dtype=dtype)
        off += 4 * count
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes after tensors")
    model.load_state_dict(state)
    model.eval()
    return model, desc.get("meta", {})


HISTORY_FIELDS = ("epoch", "step", "lr", "total", "tex", "geo", "bs")


def write_loss_history(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=HISTORY_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in HISTORY_FIELDS})


def read_loss_history(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = []
        for r in csv.DictReader(f):
            rows.append({k: (None if r[k] == "" else (int(r[k]) if k in ("epoch", "step") else float(r[k])))
                         for k in HISTORY_FIELDS})
    return rows
