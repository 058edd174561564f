"""Pose normalization: rigid alignment, cylindrical unwrapping and triangle warping."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .errors import AlignmentDegenerateError, DegenerateCylinderError, ShapeError, UndefinedAzimuthError
from .landmarks import LandmarkFrame
from .topology import ATLAS_SIZE, FaceTopology

log = logging.getLogger(__name__)

# Fixed atlas anchors (u, v): mean left-eye corners, mean right-eye corners, nose tip.
LEFT_EYE_PIXEL = (88.0, 96.0)
RIGHT_EYE_PIXEL = (168.0, 96.0)
NOSE_TIP_PIXEL = (128.0, 140.0)

UP_AXIS = np.array([0.0, 1.0, 0.0])


@dataclass
class SimilarityTransform:
    """``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * p @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))


def umeyama_align(src, dst) -> SimilarityTransform:
    """Least-squares similarity transform taking ``src`` onto ``dst``.

    Reflections are never returned: when the optimal orthogonal map has
    negative determinant the smallest singular direction is flipped.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ShapeError("umeyama_align expects two Nx3 arrays of equal length")
    n = src.shape[0]
    if n < 3:
        raise AlignmentDegenerateError(f"need at least 3 points, got {n}")

    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-10 * sv[0]:
        raise AlignmentDegenerateError("source points are collinear or coincident")

    var_s = (xs ** 2).sum() / n
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rot = (u * s) @ vt
    scale = float((d * s).sum() / var_s)
    trans = mu_d - scale * rot @ mu_s
    return SimilarityTransform(scale, rot, trans)


def alignment_residual(src, dst, tf: SimilarityTransform) -> float:
    return float(((tf.apply(src) - np.asarray(dst)) ** 2).sum())


@dataclass
class CylinderRef:
    """Vertical reference cylinder and its affine map from (azimuth, height) to atlas pixels.

    ``facing`` is the sign of the z direction pointing from the axis towards
    the face surface; azimuth zero looks along it.
    """

    axis_point: np.ndarray
    axis_direction: np.ndarray
    radius: float
    u_scale: float
    u_offset: float
    v_scale: float
    v_offset: float
    facing: float = -1.0

    def to_dict(self) -> dict:
        return {
            "axis_point": [float(x) for x in self.axis_point],
            "axis_direction": [float(x) for x in self.axis_direction],
            "radius": float(self.radius),
            "u_scale": float(self.u_scale),
            "u_offset": float(self.u_offset),
            "v_scale": float(self.v_scale),
            "v_offset": float(self.v_offset),
            "facing": float(self.facing),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CylinderRef":
        return cls(
            axis_point=np.asarray(d["axis_point"], dtype=np.float64),
            axis_direction=np.asarray(d["axis_direction"], dtype=np.float64),
            radius=float(d["radius"]),
            u_scale=float(d["u_scale"]),
            u_offset=float(d["u_offset"]),
            v_scale=float(d["v_scale"]),
            v_offset=float(d["v_offset"]),
            facing=float(d.get("facing", -1.0)),
        )


def _azimuth_height(vertices, axis_point, facing):
    p = np.asarray(vertices, dtype=np.float64) - axis_point
    dx, dz = p[:, 0], p[:, 2]
    if np.any(np.hypot(dx, dz) < 1e-12):
        raise UndefinedAzimuthError("vertex lies on the cylinder axis")
    return np.arctan2(dx, facing * dz), p[:, 1]


def circle_fit_residual(points_xz, center, radius=None) -> float:
    """Sum of squared (distance-to-center - radius); radius defaults to its optimum."""
    d = np.hypot(points_xz[:, 0] - center[0], points_xz[:, 1] - center[1])
    r = d.mean() if radius is None else radius
    return float(((d - r) ** 2).sum())


def _fit_circle(pts):
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] < 1e-9 or sv[1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateCylinderError("vertices are coincident or coplanar with the axis")
    # Algebraic (Kasa) fit as the starting point.
    a = np.column_stack([2 * pts, np.ones(len(pts))])
    b = (pts ** 2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    c0 = sol[:2]

    def resid(c):
        d = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
        return d - d.mean()

    res = optimize.least_squares(resid, c0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    center = res.x
    radius = float(np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]).mean())
    if not np.isfinite(radius) or radius <= 0:
        raise DegenerateCylinderError("cylinder fit did not converge")
    return center, radius


def fit_reference_cylinder(ref_frame: LandmarkFrame, topo: FaceTopology) -> CylinderRef:
    """Fit a vertical cylinder to the reference vertices and pin the eye/nose anchors."""
    v = ref_frame.vertices
    if not np.all(np.isfinite(v)):
        raise DegenerateCylinderError("non-finite reference vertices")
    pts = v[:, [0, 2]]
    center, radius = _fit_circle(pts)
    facing = -1.0 if (pts[:, 1] - center[1]).mean() < 0 else 1.0
    axis_point = np.array([center[0], 0.0, center[1]])

    anchors = np.stack([
        v[topo.left_eye_indices].mean(axis=0),
        v[topo.right_eye_indices].mean(axis=0),
        v[topo.nose_tip_indices].mean(axis=0),
    ])
    theta, height = _azimuth_height(anchors, axis_point, facing)
    target_u = np.array([LEFT_EYE_PIXEL[0], RIGHT_EYE_PIXEL[0], NOSE_TIP_PIXEL[0]])
    target_v = np.array([LEFT_EYE_PIXEL[1], RIGHT_EYE_PIXEL[1], NOSE_TIP_PIXEL[1]])
    if np.ptp(theta) < 1e-12 or np.ptp(height) < 1e-12:
        raise DegenerateCylinderError("eye and nose anchors do not span the atlas")
    u_scale, u_offset = np.polyfit(theta, target_u, 1)
    v_scale, v_offset = np.polyfit(height, target_v, 1)
    return CylinderRef(axis_point, UP_AXIS.copy(), radius, float(u_scale), float(u_offset),
                       float(v_scale), float(v_offset), facing)


def cylinder_uv(vertices, cyl: CylinderRef) -> np.ndarray:
    """Atlas (u, v) pixel coordinates of each vertex on the reference cylinder."""
    theta, height = _azimuth_height(vertices, cyl.axis_point, cyl.facing)
    return np.stack([cyl.u_scale * theta + cyl.u_offset, cyl.v_scale * height + cyl.v_offset], axis=1)


def normalize_pose(frame: LandmarkFrame, ref_frame: LandmarkFrame, topo: FaceTopology):
    """Align the rigid upper face of ``frame`` onto the reference; returns (vertices, transform)."""
    idx = topo.rigid_indices
    tf = umeyama_align(frame.vertices[idx], ref_frame.vertices[idx])
    return tf.apply(frame.vertices), tf


def estimate_yaw(vertices, topo: FaceTopology) -> float:
    """Yaw (radians) of a face relative to its own mirror image.

    The mirrored, relabelled copy of a symmetric face turned by ``psi`` is
    turned by ``-psi``; aligning the two gives a rotation of ``-2 psi``.
    """
    perm = topo.mirror_map()
    idx = np.intersect1d(topo.rigid_indices, topo.mirror_pairs.ravel())
    if idx.size < 3:
        idx = topo.mirror_pairs.ravel()
    v = np.asarray(vertices, dtype=np.float64)
    mirrored = v[perm] * np.array([-1.0, 1.0, 1.0])
    tf = umeyama_align(v[idx], mirrored[idx])
    r = tf.rotation
    return float(-0.5 * np.arctan2(r[0, 2], r[0, 0]))


def select_reference_frame(frames, topo: FaceTopology) -> int:
    """Index of the most frontal frame (smallest absolute yaw; earliest on ties)."""
    yaws = [abs(estimate_yaw(f.vertices, topo)) for f in frames]
    return int(np.argmin(yaws))


@dataclass
class TextureAtlas:
    pixels: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[..., None]
        if px.min(initial=0.0) < -1e-9 or px.max(initial=0.0) > 1 + 1e-9:
            raise ValueError("atlas pixels must lie in [0, 1]")
        self.pixels = np.clip(px, 0.0, 1.0)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.valid_mask.shape != self.pixels.shape[:2]:
            raise ShapeError("valid_mask must match the pixel grid")

    @property
    def shape(self):
        return self.pixels.shape

    @classmethod
    def full(cls, pixels) -> "TextureAtlas":
        px = np.asarray(pixels, dtype=np.float64)
        return cls(px, np.ones(px.shape[:2], dtype=bool))


def _signed_area(p):
    return 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))


def rasterize_coords(src_coords, dst_coords, triangles, dst_size, depth=None, cull_backfaces=False):
    """Per destination pixel, the source (x, y) it samples from.

    Returns ``(sx, sy, covered, tri_id)``; pixel centres sit at integer
    coordinates. Overlaps go to the nearest depth when ``depth`` is given,
    otherwise to the last triangle in order.
    """
    h, w = dst_size
    src = np.asarray(src_coords, dtype=np.float64)
    dst = np.asarray(dst_coords, dtype=np.float64)
    if src.shape != dst.shape:
        raise ShapeError("src_coords and dst_coords must have the same length")
    sx = np.zeros((h, w))
    sy = np.zeros((h, w))
    tri_id = np.full((h, w), -1, dtype=np.int64)
    zbuf = np.full((h, w), np.inf) if depth is not None else None
    eps = 1e-9
    for t, tri in enumerate(np.asarray(triangles)):
        d = dst[tri]
        s = src[tri]
        area = _signed_area(d)
        if abs(area) < 1e-12:
            continue
        if cull_backfaces and np.sign(_signed_area(s)) != np.sign(area):
            continue
        x0 = max(int(np.ceil(d[:, 0].min() - eps)), 0)
        x1 = min(int(np.floor(d[:, 0].max() + eps)), w - 1)
        y0 = max(int(np.ceil(d[:, 1].min() - eps)), 0)
        y1 = min(int(np.floor(d[:, 1].max() + eps)), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        gy, gx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        gx = gx.astype(np.float64)
        gy = gy.astype(np.float64)
        # Barycentric weights of pixel centres.
        inv = 1.0 / (2.0 * area)
        l1 = ((gx - d[0, 0]) * (d[2, 1] - d[0, 1]) - (d[2, 0] - d[0, 0]) * (gy - d[0, 1])) * inv
        l2 = ((d[1, 0] - d[0, 0]) * (gy - d[0, 1]) - (gx - d[0, 0]) * (d[1, 1] - d[0, 1])) * inv
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -eps) & (l1 >= -eps) & (l2 >= -eps)
        if zbuf is not None:
            z = depth[tri]
            zi = l0 * z[0] + l1 * z[1] + l2 * z[2]
            inside &= zi < zbuf[y0:y1 + 1, x0:x1 + 1]
            zbuf[y0:y1 + 1, x0:x1 + 1][inside] = zi[inside]
        if not inside.any():
            continue
        ys, xs = gy[inside].astype(np.int64), gx[inside].astype(np.int64)
        a0, a1, a2 = l0[inside], l1[inside], l2[inside]
        sx[ys, xs] = a0 * s[0, 0] + a1 * s[1, 0] + a2 * s[2, 0]
        sy[ys, xs] = a0 * s[0, 1] + a1 * s[1, 1] + a2 * s[2, 1]
        tri_id[ys, xs] = t
    return sx, sy, tri_id >= 0, tri_id


def sample_bilinear(image, xs, ys) -> np.ndarray:
    """Bilinear lookup with clamp-to-edge; ``image`` is HxW or HxWxC."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    coords = np.stack([np.ravel(ys), np.ravel(xs)])
    out = np.stack([ndimage.map_coordinates(img[..., c], coords, order=1, mode="nearest")
                    for c in range(img.shape[2])], axis=-1)
    return out


def warp_triangles(src_image, src_coords, dst_coords, triangles, dst_size=(ATLAS_SIZE, ATLAS_SIZE),
                   depth=None, cull_backfaces=False) -> TextureAtlas:
    """Piecewise-affine warp of ``src_image`` carrying each source triangle onto its destination."""
    img = np.asarray(src_image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w = dst_size
    sx, sy, covered, _ = rasterize_coords(src_coords, dst_coords, triangles, dst_size, depth, cull_backfaces)
    out = np.zeros((h, w, img.shape[2]))
    if covered.any():
        out[covered] = sample_bilinear(img, sx[covered], sy[covered])
    return TextureAtlas(np.clip(out, 0.0, 1.0), covered)


def unroll_texture(video_frame_image, normalized_vertices, cyl: CylinderRef, topo: FaceTopology,
                   frame_vertices_2d, size=(ATLAS_SIZE, ATLAS_SIZE)) -> TextureAtlas:
    """Frontalized texture atlas of one frame."""
    uv = cylinder_uv(normalized_vertices, cyl)
    return warp_triangles(video_frame_image, np.asarray(frame_vertices_2d)[:, :2], uv,
                          topo.triangles, size, cull_backfaces=True)


def rasterize_mask(coords, triangles, size) -> np.ndarray:
    """Boolean mask of pixels covered by ``triangles`` placed at ``coords``."""
    _, _, covered, _ = rasterize_coords(coords, coords, triangles, size)
    return covered


def atlas_skin_mask(uv, topo: FaceTopology, size=(ATLAS_SIZE, ATLAS_SIZE)) -> np.ndarray:
    return rasterize_mask(uv, topo.skin_triangles(), size)
