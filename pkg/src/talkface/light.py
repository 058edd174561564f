"""Lighting normalization of frontalized texture atlases.

The temporal step maps a frame atlas ``F`` onto the illumination of a
reference ``R`` with a smooth luminance gain (robust IRLS over patches)
followed by a global per-channel affine color correction. The reference
itself is first cleaned of specular highlights and made left/right
consistent using the face's mirror symmetry.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ShapeError, TalkfaceError
from .geom import TextureAtlas, atlas_skin_mask, cylinder_uv, normalize_pose, unroll_texture, warp_triangles
from .topology import FaceTopology

log = logging.getLogger(__name__)

# BT.601 full range (JFIF); U and V are centred on zero.
_RGB2YUV = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YUV2RGB = np.linalg.inv(_RGB2YUV)


@dataclass
class LightParams:
    temperature: float = 0.1
    patch_size: int = 16
    iterations: int = 8
    grid_stride: int = 4
    specular_sigma: float = 2.0
    specular_percentile: float = 90.0
    fill_iterations: int = 200
    fill_tolerance: float = 1e-4
    mirror_center: float = 128.0


@dataclass
class GainMap:
    values: np.ndarray


@dataclass
class WeightMap:
    values: np.ndarray


@dataclass
class AlphaMap:
    values: np.ndarray


@dataclass
class ColorTransform:
    a: np.ndarray
    b: np.ndarray

    def apply(self, rgb):
        return np.asarray(rgb) * self.a + self.b

    @classmethod
    def identity(cls):
        return cls(np.ones(3), np.zeros(3))


@dataclass
class GainEstimate:
    gain: GainMap
    weights: WeightMap
    energies: list = field(default_factory=list)
    energies_previous_gain: list = field(default_factory=list)
    degenerate_patches: int = 0


def rgb_yuv_convert(image, direction: str = "forward") -> np.ndarray:
    """RGB <-> YUV (BT.601 full range) on the last axis."""
    img = np.asarray(image, dtype=np.float64)
    if direction == "forward":
        m = _RGB2YUV
    elif direction == "inverse":
        m = _YUV2RGB
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")
    return img @ m.T


def luminance(rgb) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ _RGB2YUV[0]


def _box_sum(x, size):
    return ndimage.uniform_filter(x, size=size, mode="constant") * (size * size)


def _upsample_grid(grid, stride, shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([yy.ravel() / stride, xx.ravel() / stride])
    return ndimage.map_coordinates(grid, coords, order=1, mode="nearest").reshape(h, w)


def estimate_gain_irls(F: TextureAtlas, R: TextureAtlas, weights_init: WeightMap | None = None,
                       params: LightParams | None = None) -> GainEstimate:
    """Smooth luminance gain ``G`` with ``R ~ G * F``, robust to albedo-constancy violations."""
    p = params or LightParams()
    if F.pixels.shape != R.pixels.shape:
        raise ShapeError("F and R must have the same shape")
    fy = luminance(F.pixels)
    ry = luminance(R.pixels)
    mask = (F.valid_mask & R.valid_mask).astype(np.float64)
    if not mask.any():
        raise TalkfaceError("F and R share no valid pixels")
    w = mask.copy() if weights_init is None else np.clip(weights_init.values, 0.0, 1.0) * mask
    s, k = p.grid_stride, p.patch_size

    est = GainEstimate(GainMap(np.ones_like(fy)), WeightMap(w))
    prev_grid = None
    for _ in range(p.iterations):
        num = _box_sum(w * ry * fy, k)[::s, ::s]
        den = _box_sum(w * fy * fy, k)[::s, ::s]
        rr = _box_sum(w * ry * ry, k)[::s, ::s]
        bad = den < 1e-12
        grid = np.where(bad, 1.0, num / np.where(bad, 1.0, den))
        # Patch energy sum_k sum_{j in p_k} W_j (R_j - G_k F_j)^2 at the current weights.
        est.energies.append(float((rr - 2 * grid * num + grid * grid * den).sum()))
        if prev_grid is not None:
            est.energies_previous_gain.append(float((rr - 2 * prev_grid * num + prev_grid ** 2 * den).sum()))
        prev_grid = grid
        est.degenerate_patches = int(bad.sum())
        gain = _upsample_grid(grid, s, fy.shape)
        err = (ry - gain * fy) ** 2
        w = np.exp(-err / p.temperature) * mask
    est.gain = GainMap(gain)
    est.weights = WeightMap(w)
    if est.degenerate_patches:
        log.debug("gain defaulted to 1 in %d degenerate patches", est.degenerate_patches)
    return est


def estimate_color_transform(F_l: TextureAtlas, R: TextureAtlas, W: WeightMap) -> ColorTransform:
    """Per-channel weighted least squares for ``R ~ a * F_l + b``."""
    if F_l.pixels.shape != R.pixels.shape:
        raise ShapeError("F_l and R must have the same shape")
    w = W.values * (F_l.valid_mask & R.valid_mask)
    sw = w.sum()
    if sw <= 0:
        return ColorTransform.identity()
    a = np.ones(3)
    b = np.zeros(3)
    for c in range(3):
        f = F_l.pixels[..., c]
        r = R.pixels[..., c]
        mf = (w * f).sum() / sw
        mr = (w * r).sum() / sw
        var = (w * (f - mf) ** 2).sum() / sw
        if var < 1e-12:
            a[c], b[c] = 1.0, mr - mf
            continue
        cov = (w * (f - mf) * (r - mr)).sum() / sw
        a[c] = cov / var
        b[c] = mr - a[c] * mf
    return ColorTransform(a, b)


def apply_gain(rgb, gain) -> np.ndarray:
    yuv = rgb_yuv_convert(rgb)
    yuv[..., 0] *= gain
    return rgb_yuv_convert(yuv, "inverse")


@dataclass
class TemporalResult:
    normalized: TextureAtlas
    gain: GainMap
    color: ColorTransform
    weights: WeightMap
    estimate: GainEstimate


def normalize_temporal(F: TextureAtlas, R: TextureAtlas, params: LightParams | None = None) -> TemporalResult:
    """Bring ``F`` to the illumination of ``R`` (already warped into F's texture coordinates)."""
    est = estimate_gain_irls(F, R, params=params)
    # The color fit sees the unclamped relit values.
    lit_raw = apply_gain(F.pixels, est.gain.values)
    color = estimate_color_transform(_Unchecked(lit_raw, F.valid_mask), R, est.weights)
    out = np.clip(color.apply(lit_raw), 0.0, 1.0)
    out[~F.valid_mask] = 0.0
    return TemporalResult(TextureAtlas(out, F.valid_mask), est.gain, color, est.weights, est)


class _Unchecked:
    """Atlas-like holder that skips the [0, 1] range check."""

    def __init__(self, pixels, valid_mask):
        self.pixels = pixels
        self.valid_mask = valid_mask


def mirror_horizontal(arr, center: float = 128.0) -> np.ndarray:
    """Reflect columns about ``center`` (column i -> 2*center - i); unmatched columns keep their value."""
    a = np.asarray(arr)
    w = a.shape[1]
    src = np.rint(2 * center - np.arange(w)).astype(np.int64)
    ok = (src >= 0) & (src < w)
    src = np.where(ok, src, np.arange(w))
    return a[:, src]


@dataclass
class SymmetrizeResult:
    normalized: TextureAtlas
    gain_symmetric: GainMap
    gain_applied: GainMap
    gain_mirror: GainMap


def symmetrize_reference(R: TextureAtlas, topo: FaceTopology | None = None,
                         params: LightParams | None = None) -> SymmetrizeResult:
    """Equalize left/right illumination of the reference by brightening the darker twin.

    ``gain_mirror`` maps R onto its mirror image; ``gain_symmetric`` is its
    pointwise max with its own mirror. Only the darker pixel of each mirror
    pair is multiplied by the symmetric gain, the brighter one is kept.
    """
    p = params or LightParams()
    c = p.mirror_center
    mirrored = TextureAtlas(mirror_horizontal(R.pixels, c), mirror_horizontal(R.valid_mask, c))
    gm = estimate_gain_irls(R, mirrored, params=p).gain.values
    gm_mirror = mirror_horizontal(gm, c)
    gs = np.maximum(gm, gm_mirror)
    applied = np.where(gm >= gm_mirror, gs, 1.0)
    out = np.clip(apply_gain(R.pixels, applied), 0.0, 1.0)
    out[~R.valid_mask] = 0.0
    return SymmetrizeResult(TextureAtlas(out, R.valid_mask), GainMap(gs), GainMap(applied), GainMap(gm))


def _hole_fill(values, hole, domain, iterations, tol):
    """Harmonic fill of ``hole`` pixels from their non-hole neighbours inside ``domain``."""
    known = domain & ~hole
    x = np.where(known, values, 0.0)
    # Normalized-convolution initial guess, then Jacobi sweeps.
    num = ndimage.gaussian_filter(x * known, 4.0)
    den = ndimage.gaussian_filter(known.astype(np.float64), 4.0)
    guess = np.where(den > 1e-8, num / np.maximum(den, 1e-8), values[known].mean() if known.any() else 0.0)
    x = np.where(hole, guess, x)
    nb = domain.astype(np.float64)
    kern = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.float64)
    count = ndimage.convolve(nb, kern, mode="constant")
    for _ in range(iterations):
        s = ndimage.convolve(x * nb, kern, mode="constant")
        new = np.where(hole & (count > 0), s / np.maximum(count, 1), x)
        delta = np.abs(new - x).max() if hole.any() else 0.0
        x = new
        if delta < tol:
            break
    return x


@dataclass
class SpecularResult:
    clean: TextureAtlas
    alpha: AlphaMap
    mask: np.ndarray
    pseudo_clean_luma: np.ndarray


def remove_specularity(I: TextureAtlas, skin_mask, params: LightParams | None = None) -> SpecularResult:
    """Invert ``I = alpha + (1 - alpha) * I_c`` inside detected highlight regions."""
    p = params or LightParams()
    skin = np.asarray(skin_mask, dtype=bool) & I.valid_mask
    if not skin.any():
        raise TalkfaceError("skin mask is empty")
    smooth = np.stack([ndimage.gaussian_filter(I.pixels[..., c], p.specular_sigma) for c in range(3)], -1)
    stat = smooth.min(axis=2)
    thr = np.percentile(stat[skin], p.specular_percentile)
    mask = (stat > thr) & skin

    y = luminance(I.pixels)
    if not mask.any():
        return SpecularResult(I, AlphaMap(np.zeros_like(y)), mask, y)
    filled = _hole_fill(y, mask, skin, p.fill_iterations, p.fill_tolerance)
    denom = 1.0 - filled
    safe = mask & (filled < 1.0 - 1e-6)
    alpha = np.zeros_like(y)
    alpha[safe] = (y[safe] - filled[safe]) / denom[safe]
    alpha = np.clip(alpha, 0.0, 1.0 - 1e-6)
    a = alpha[..., None]
    clean = np.clip((I.pixels - a) / (1.0 - a), 0.0, 1.0)
    clean[~I.valid_mask] = I.pixels[~I.valid_mask]
    return SpecularResult(TextureAtlas(clean, I.valid_mask), AlphaMap(alpha), mask, filled)


@dataclass
class FrameResult:
    index: int
    atlas: TextureAtlas | None = None
    raw_atlas: TextureAtlas | None = None
    uv: np.ndarray | None = None
    normalized_vertices: np.ndarray | None = None
    transform: object = None
    gain: GainMap | None = None
    weights: WeightMap | None = None
    alpha: AlphaMap | None = None
    color: ColorTransform | None = None
    error: str | None = None


@dataclass
class NormalizedSequence:
    frames: list
    reference: TextureAtlas
    reference_uv: np.ndarray
    reference_index: int

    @property
    def failures(self):
        return [(f.index, f.error) for f in self.frames if f.error is not None]


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def normalize_sequence(frames, ref_index: int, topo: FaceTopology, cyl, params: LightParams | None = None,
                       threads: int = 1) -> NormalizedSequence:
    """Pose- and lighting-normalize a sequence of ``(image, LandmarkFrame)`` pairs.

    Specularities are removed from every frontalized atlas, the reference is
    symmetrized, then each frame is normalized against the symmetrized
    reference warped into that frame's texture coordinates.
    """
    p = params or LightParams()
    if not 0 <= ref_index < len(frames):
        raise IndexError(f"reference index {ref_index} out of range")
    ref_lm = frames[ref_index][1]

    def frontalize(i):
        image, lm = frames[i]
        res = FrameResult(i)
        try:
            verts, tf = normalize_pose(lm, ref_lm, topo)
            uv = cylinder_uv(verts, cyl)
            raw = unroll_texture(image, verts, cyl, topo, lm.vertices[:, :2])
            skin = atlas_skin_mask(uv, topo, raw.valid_mask.shape)
            spec = remove_specularity(raw, skin, p)
            res.raw_atlas, res.uv, res.normalized_vertices, res.transform = raw, uv, verts, tf
            res.atlas, res.alpha = spec.clean, spec.alpha
        except TalkfaceError as exc:
            res.error = f"{exc.code}: {exc}"
            log.warning("frame %d failed: %s", i, res.error)
        return res

    results = _map(frontalize, range(len(frames)), threads)
    ref = results[ref_index]
    if ref.error is not None:
        raise TalkfaceError(f"reference frame {ref_index} failed: {ref.error}")
    sym = symmetrize_reference(ref.atlas, topo, p)
    ref_atlas, ref_uv = sym.normalized, ref.uv

    def temporal(res):
        if res.error is not None:
            return res
        try:
            warped = warp_triangles(ref_atlas.pixels, ref_uv, res.uv, topo.triangles, ref_atlas.pixels.shape[:2])
            warped.valid_mask &= warp_triangles(ref_atlas.valid_mask.astype(float), ref_uv, res.uv,
                                                topo.triangles, ref_atlas.pixels.shape[:2]).pixels[..., 0] > 0.5
            out = normalize_temporal(res.atlas, warped, p)
            res.atlas, res.gain, res.weights, res.color = out.normalized, out.gain, out.weights, out.color
        except TalkfaceError as exc:
            res.error = f"{exc.code}: {exc}"
            res.atlas = None
            log.warning("frame %d failed: %s", res.index, res.error)
        return res

    results = _map(temporal, results, threads)
    return NormalizedSequence(results, ref_atlas, ref_uv, ref_index)
