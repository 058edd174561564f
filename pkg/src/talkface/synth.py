"""Turning predictions back into images: textured meshes, relighting, chin warp and compositing."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import geom, imageio
from .errors import FormatError, ShapeError
from .geom import CylinderRef, TextureAtlas
from .landmarks import LandmarkFrame
from .light import LightParams, normalize_temporal
from .topology import ATLAS_SIZE, FaceTopology

log = logging.getLogger(__name__)

CHIN_BAND_PX = 40
BLEND_FEATHER_PX = 12
CROP_FEATHER_PX = 8


@dataclass
class TexturedMesh:
    vertices: np.ndarray
    uv: np.ndarray
    triangles: np.ndarray
    atlas: TextureAtlas

    def __post_init__(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ShapeError("mesh vertices must be V x 3")
        if self.uv.shape != (len(self.vertices), 2):
            raise ShapeError("uv must be V x 2")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ShapeError("triangle index out of range")


def build_textured_mesh(vertices, atlas: TextureAtlas, cyl: CylinderRef, topo: FaceTopology) -> TexturedMesh:
    v = np.asarray(vertices, dtype=np.float64)
    return TexturedMesh(v, geom.cylinder_uv(v, cyl), np.asarray(topo.triangles), atlas)


def crop_feather(size: int = 128, feather: int = CROP_FEATHER_PX) -> np.ndarray:
    """Weight that is 1 inside the crop and ramps linearly to 0 over ``feather`` px at its border."""
    d = np.minimum(np.arange(size), np.arange(size)[::-1]) + 0.5
    r = np.clip(d / feather, 0.0, 1.0)
    return np.minimum.outer(r, r)


def compose_atlas(reference_atlas, crop, lip_crop, feather: int = CROP_FEATHER_PX) -> np.ndarray:
    """Paste a predicted H x W x 3 lip crop into the reference atlas with a linear feather."""
    out = np.array(reference_atlas, dtype=np.float64, copy=True)
    x, y, w, h = (int(v) for v in lip_crop)
    crop = np.asarray(crop, dtype=np.float64)
    if crop.shape != (h, w, 3):
        raise ShapeError(f"crop shape {crop.shape} does not match lip crop {w}x{h}")
    wt = crop_feather(w, feather)[..., None] if w == h else 1.0
    out[y:y + h, x:x + w] = wt * crop + (1 - wt) * out[y:y + h, x:x + w]
    return out


# --- OBJ export -------------------------------------------------------------------------------

def export_obj(mesh: TexturedMesh, path, texture_ext: str = "png") -> list[Path]:
    """Write ``<stem>.obj``, ``<stem>.mtl`` and ``<stem>_texture.<ext>``; returns the paths.

    Vertex and texture coordinates use round-trip float formatting, so
    :func:`read_obj` recovers them exactly.
    """
    path = Path(path)
    stem = path.with_suffix("")
    obj, mtl = stem.with_suffix(".obj"), stem.with_suffix(".mtl")
    tex = stem.parent / f"{stem.name}_texture.{texture_ext}"
    h, w = mesh.atlas.pixels.shape[:2]
    lines = [f"mtllib {mtl.name}", "usemtl face"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    # OBJ texture space has its origin at the bottom-left corner.
    lines += [f"vt {u / (w - 1)!r} {1.0 - v / (h - 1)!r}" for u, v in mesh.uv.tolist()]
    lines += ["f " + " ".join(f"{i + 1}/{i + 1}" for i in tri) for tri in mesh.triangles.tolist()]
    obj.parent.mkdir(parents=True, exist_ok=True)
    obj.write_text("\n".join(lines) + "\n")
    mtl.write_text(f"newmtl face\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nmap_Kd {tex.name}\n")
    imageio.write_image(tex, mesh.atlas.pixels)
    return [obj, mtl, tex]


def read_obj(path, atlas_size=(ATLAS_SIZE, ATLAS_SIZE)):
    """Returns (vertices, uv in atlas pixels, triangles) of an OBJ written by :func:`export_obj`."""
    verts, vts, tris = [], [], []
    h, w = atlas_size
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "vt":
            vts.append([float(p) for p in parts[1:3]])
        elif parts[0] == "f":
            tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    if not verts:
        raise FormatError(f"{path}: no vertices")
    vt = np.array(vts)
    uv = np.stack([vt[:, 0] * (w - 1), (1.0 - vt[:, 1]) * (h - 1)], 1) if len(vt) else np.zeros((0, 2))
    return np.array(verts), uv, np.array(tris, dtype=np.int64)


# --- relighting and compositing -----------------------------------------------------------------

def relight_to_target(predicted_atlas: TextureAtlas, target_atlas: TextureAtlas,
                      params: LightParams | None = None) -> TextureAtlas:
    """Transfer the target's illumination onto a normalized prediction (target as reference)."""
    return normalize_temporal(predicted_atlas, target_atlas, params).normalized


def _polyline_ok(top, bottom) -> bool:
    dx = np.diff(top[:, 0])
    if not (np.all(dx > 0) or np.all(dx < 0)):
        return False
    return bool(np.all(bottom[:, 1] > top[:, 1]))


def chin_warp(image, old_chin, new_chin, band: int = CHIN_BAND_PX) -> np.ndarray:
    """Stretch the region below the chin so the old chin line moves onto the new one.

    The band spans from the upper of the two chin lines down to ``band`` px
    below the lower one. Inside it, the strip under the chin is mapped
    piecewise-affinely (old chin -> new chin, band bottom fixed); pixels
    outside the band are copied unchanged.
    """
    img = np.asarray(image, dtype=np.float64)
    old = np.asarray(old_chin, dtype=np.float64)[:, :2]
    new = np.asarray(new_chin, dtype=np.float64)[:, :2]
    if old.shape != new.shape or len(old) < 2:
        raise ShapeError("chin polylines must have the same number (>= 2) of points")
    if np.array_equal(old, new):
        return img.copy()
    top = old.copy()
    top[:, 1] = np.minimum(old[:, 1], new[:, 1])
    bottom = old.copy()
    bottom[:, 1] = np.maximum(old[:, 1], new[:, 1]) + band
    if not (_polyline_ok(old, bottom) and _polyline_ok(new, bottom)):
        log.warning("chin band is self-intersecting; leaving the frame unwarped")
        return img.copy()
    # Two strips: top line -> chin, chin -> bottom; only the chin row moves.
    n = len(old)
    src = np.concatenate([top, old, bottom])
    dst = np.concatenate([top, new, bottom])
    tris = []
    for s in range(2):
        a, b = s * n, (s + 1) * n
        for i in range(n - 1):
            tris.append([a + i, a + i + 1, b + i + 1])
            tris.append([a + i, b + i + 1, b + i])
    tris = np.array(tris)
    h, w = img.shape[:2]
    sx, sy, covered, _ = geom.rasterize_coords(src, dst, tris, (h, w))
    out = img.copy()
    if covered.any():
        vals = geom.sample_bilinear(img, sx[covered], sy[covered])
        out[covered] = vals if img.ndim == 3 else vals[:, 0]
    return out


def feather_mask(mask, width: int = BLEND_FEATHER_PX) -> np.ndarray:
    """1 deep inside ``mask``, ramping linearly to 0 at its boundary over ``width`` px; 0 outside."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape)
    d = ndimage.distance_transform_edt(mask)
    return np.clip(d / width, 0.0, 1.0) * mask


@dataclass
class BlendResult:
    image: np.ndarray
    face_mask: np.ndarray
    weights: np.ndarray
    relit: TextureAtlas | None
    target_atlas: TextureAtlas | None


def blend_into_frame(target_frame, target_landmarks: LandmarkFrame, mesh: TexturedMesh, cyl: CylinderRef,
                     topo: FaceTopology, params: LightParams | None = None) -> BlendResult:
    """Composite a predicted textured mesh into a target video frame.

    The mesh (in reference-normalized space) is posed onto the target by
    aligning its rigid vertices with the target landmarks. The target's own
    unrolled atlas, warped into the mesh's texture coordinates, is the
    relighting reference. The chin region is warped to the new chin line and
    the face is blended in with a feathered mask.
    """
    frame = np.asarray(target_frame, dtype=np.float64)
    h, w = frame.shape[:2]
    idx = topo.rigid_indices
    pose = geom.umeyama_align(mesh.vertices[idx], target_landmarks.vertices[idx])
    posed = pose.apply(mesh.vertices)

    # Target texture in its own cylinder coordinates, then moved into the mesh's.
    target_norm = pose.inverse().apply(target_landmarks.vertices)
    target_uv = geom.cylinder_uv(target_norm, cyl)
    size = mesh.atlas.pixels.shape[:2]
    target_atlas = geom.unroll_texture(frame, target_norm, cyl, topo, target_landmarks.vertices[:, :2], size)
    warped = geom.warp_triangles(target_atlas.pixels, target_uv, mesh.uv, topo.triangles, size)
    moved_mask = geom.warp_triangles(target_atlas.valid_mask.astype(float), target_uv, mesh.uv,
                                     topo.triangles, size).pixels[..., 0] > 0.5
    warped = TextureAtlas(warped.pixels, warped.valid_mask & moved_mask & mesh.atlas.valid_mask)
    pred = TextureAtlas(mesh.atlas.pixels, mesh.atlas.valid_mask & warped.valid_mask)
    if not pred.valid_mask.any():
        log.warning("no overlap between prediction and target face; returning the target frame")
        return BlendResult(frame.copy(), np.zeros((h, w), bool), np.zeros((h, w)), None, target_atlas)
    relit = relight_to_target(pred, warped, params)

    face = geom.warp_triangles(relit.pixels, mesh.uv, posed[:, :2], topo.triangles, (h, w),
                               depth=posed[:, 2], cull_backfaces=True)
    # Only pixels whose texture came from valid atlas texels count as face.
    cover = geom.warp_triangles(relit.valid_mask.astype(float), mesh.uv, posed[:, :2], topo.triangles,
                                (h, w), depth=posed[:, 2], cull_backfaces=True)
    face_mask = face.valid_mask & (cover.pixels[..., 0] > 0.999)
    if not face_mask.any():
        log.warning("empty face region; returning the target frame")
        return BlendResult(frame.copy(), face_mask, np.zeros((h, w)), relit, target_atlas)

    chin = topo.chin_indices
    order = np.argsort(target_landmarks.vertices[chin, 0])
    background = chin_warp(frame, target_landmarks.vertices[chin][order], posed[chin][order])
    wt = feather_mask(face_mask)
    wt3 = wt[..., None] if frame.ndim == 3 else wt
    out = np.where(wt3 > 0, wt3 * face.pixels.reshape(frame.shape) + (1 - wt3) * background, background)
    return BlendResult(np.clip(out, 0.0, 1.0), face_mask, wt, relit, target_atlas)
