"""Fixed-topology face mesh description and its plain-text file format.

A topology carries the triangulation of the 468 tracked vertices plus the
named vertex subsets the pipeline relies on (rigid upper face, mouth, chin
contour, eye and nose anchors) and the left/right mirror pairing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

VERTEX_COUNT = 468
ATLAS_SIZE = 256
LIP_CROP_SIZE = 128

# Default layout: 18 rows x 26 columns laid out on the atlas.
GRID_ROWS = 18
GRID_COLS = 26
GRID_DU = 20.0 / 3.0
GRID_DV = 11.0
GRID_V0 = 30.0

FORMAT_VERSION = 1


@dataclass
class FaceTopology:
    """Triangulation plus vertex index sets for a fixed 468-vertex face mesh."""

    triangles: np.ndarray
    rigid_indices: np.ndarray
    mouth_indices: np.ndarray
    skin_vertex_mask: np.ndarray
    mirror_pairs: np.ndarray
    lip_crop: tuple[int, int, int, int]
    left_eye_indices: np.ndarray
    right_eye_indices: np.ndarray
    nose_tip_indices: np.ndarray
    chin_indices: np.ndarray
    vertex_count: int = VERTEX_COUNT
    template_uv: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        for name in ("rigid_indices", "mouth_indices", "left_eye_indices",
                     "right_eye_indices", "nose_tip_indices", "chin_indices"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).ravel())
        self.skin_vertex_mask = np.asarray(self.skin_vertex_mask, dtype=bool).ravel()
        self.mirror_pairs = np.asarray(self.mirror_pairs, dtype=np.int64).reshape(-1, 2)
        self.lip_crop = tuple(int(x) for x in self.lip_crop)
        if self.template_uv is not None:
            self.template_uv = np.asarray(self.template_uv, dtype=np.float64).reshape(-1, 2)
        self.validate()

    def validate(self) -> None:
        n = self.vertex_count
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise FormatError("triangle index out of range")
        for name in ("rigid_indices", "mouth_indices", "left_eye_indices",
                     "right_eye_indices", "nose_tip_indices", "chin_indices"):
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise FormatError(f"{name} out of range")
        if self.rigid_indices.size == 0:
            raise FormatError("rigid_indices must be nonempty")
        if self.skin_vertex_mask.shape != (n,):
            raise FormatError("skin mask must have one entry per vertex")
        flat = self.mirror_pairs.ravel()
        if len(np.unique(flat)) != len(flat):
            raise FormatError("mirror_pairs must not repeat an index")
        if flat.size and (flat.min() < 0 or flat.max() >= n):
            raise FormatError("mirror pair index out of range")
        x, y, w, h = self.lip_crop
        if x < 0 or y < 0 or x + w > ATLAS_SIZE or y + h > ATLAS_SIZE:
            raise FormatError("lip_crop must lie inside the atlas")
        if self.template_uv is not None and self.template_uv.shape != (n, 2):
            raise FormatError("template_uv must be vertex_count x 2")

    def mirror_map(self) -> np.ndarray:
        """Permutation sending each vertex to its mirror (identity if unpaired)."""
        perm = np.arange(self.vertex_count)
        a, b = self.mirror_pairs[:, 0], self.mirror_pairs[:, 1]
        perm[a] = b
        perm[b] = a
        return perm

    def skin_triangles(self) -> np.ndarray:
        keep = self.skin_vertex_mask[self.triangles].all(axis=1)
        return self.triangles[keep]


def _grid_index(r, c):
    return r * GRID_COLS + c


def default_topology() -> FaceTopology:
    """The built-in 18x26 grid layout used by the synthetic corpus."""
    tris = []
    for r in range(GRID_ROWS - 1):
        for c in range(GRID_COLS - 1):
            a, b = _grid_index(r, c), _grid_index(r + 1, c)
            cc, d = _grid_index(r, c + 1), _grid_index(r + 1, c + 1)
            tris.append((a, b, cc))
            tris.append((b, d, cc))

    rows, cols = np.divmod(np.arange(VERTEX_COUNT), GRID_COLS)
    rigid = np.flatnonzero(rows <= 9)
    mouth = np.flatnonzero((rows >= 12) & (rows <= 14) & (cols >= 9) & (cols <= 16))
    eyes = (rows >= 5) & (rows <= 7) & (((cols >= 4) & (cols <= 9)) | ((cols >= 16) & (cols <= 21)))
    skin = ~eyes
    skin[mouth] = False
    left = np.flatnonzero(cols < GRID_COLS // 2)
    pairs = np.stack([left, rows[left] * GRID_COLS + (GRID_COLS - 1 - cols[left])], axis=1)

    u = 128.0 + (cols - (GRID_COLS - 1) / 2.0) * GRID_DU
    v = GRID_V0 + rows * GRID_DV
    return FaceTopology(
        triangles=np.array(tris),
        rigid_indices=rigid,
        mouth_indices=mouth,
        skin_vertex_mask=skin,
        mirror_pairs=pairs,
        lip_crop=(64, 116, LIP_CROP_SIZE, LIP_CROP_SIZE),
        left_eye_indices=[_grid_index(6, 4), _grid_index(6, 9)],
        right_eye_indices=[_grid_index(6, 16), _grid_index(6, 21)],
        nose_tip_indices=[_grid_index(10, 12), _grid_index(10, 13)],
        chin_indices=[_grid_index(GRID_ROWS - 1, c) for c in range(GRID_COLS)],
        template_uv=np.stack([u, v], axis=1),
    )


_INDEX_SETS = ("rigid", "mouth", "left_eye", "right_eye", "nose_tip", "chin")


def save_topology(topo: FaceTopology, path) -> None:
    lines = ["talkface-topology", f"version {FORMAT_VERSION}", f"vertex_count {topo.vertex_count}"]
    lines.append(f"triangles {len(topo.triangles)}")
    lines += [f"{a} {b} {c}" for a, b, c in topo.triangles]
    for name in _INDEX_SETS:
        idx = getattr(topo, f"{name}_indices")
        lines.append(f"{name} {len(idx)}")
        lines.append(" ".join(str(i) for i in idx))
    lines.append("skin " + "".join("1" if s else "0" for s in topo.skin_vertex_mask))
    lines.append(f"mirror {len(topo.mirror_pairs)}")
    lines += [f"{a} {b}" for a, b in topo.mirror_pairs]
    lines.append("lip_crop " + " ".join(str(x) for x in topo.lip_crop))
    if topo.template_uv is not None:
        lines.append(f"template_uv {len(topo.template_uv)}")
        lines += [f"{u!r} {v!r}" for u, v in topo.template_uv.tolist()]
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_topology(path) -> FaceTopology:
    tokens = Path(path).read_text().split("\n")
    it = iter(line.strip() for line in tokens)

    def next_line():
        for line in it:
            if line and not line.startswith("#"):
                return line
        raise FormatError(f"{path}: unexpected end of topology file")

    if next_line() != "talkface-topology":
        raise FormatError(f"{path}: missing topology magic")
    key, ver = next_line().split()
    if key != "version" or int(ver) != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported topology version {ver}")
    fields: dict = {}
    while True:
        line = next_line()
        if line == "end":
            break
        key, _, rest = line.partition(" ")
        try:
            if key == "vertex_count":
                fields["vertex_count"] = int(rest)
            elif key == "triangles":
                n = int(rest)
                fields["triangles"] = [[int(x) for x in next_line().split()] for _ in range(n)]
            elif key in _INDEX_SETS:
                n = int(rest)
                fields[f"{key}_indices"] = [int(x) for x in next_line().split()] if n else []
            elif key == "skin":
                fields["skin_vertex_mask"] = [ch == "1" for ch in rest.strip()]
            elif key == "mirror":
                n = int(rest)
                fields["mirror_pairs"] = [[int(x) for x in next_line().split()] for _ in range(n)]
            elif key == "lip_crop":
                fields["lip_crop"] = tuple(int(x) for x in rest.split())
            elif key == "template_uv":
                n = int(rest)
                fields["template_uv"] = [[float(x) for x in next_line().split()] for _ in range(n)]
            else:
                raise FormatError(f"{path}: unknown topology section {key!r}")
        except ValueError as exc:
            raise FormatError(f"{path}: malformed section {key!r}: {exc}") from exc
    missing = {"triangles", "skin_vertex_mask", "mirror_pairs", "lip_crop"} - fields.keys()
    missing |= {f"{k}_indices" for k in _INDEX_SETS} - fields.keys()
    if missing:
        raise FormatError(f"{path}: missing sections {sorted(missing)}")
    return FaceTopology(**fields)
