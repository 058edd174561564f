"""Synthetic faces with known pose, lighting, specularity and audio-driven mouth motion.

Every corruption applied here is the forward model of a pipeline stage, so
the generated ground truth (atlases, gains, alphas, vertices) serves as the
oracle for pose normalization, lighting normalization and training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from . import geom
from .geom import CylinderRef, SimilarityTransform, TextureAtlas
from .landmarks import LandmarkFrame
from .light import apply_gain, mirror_horizontal
from .topology import ATLAS_SIZE, FaceTopology, default_topology

SAMPLE_RATE = 16000
FPS = 30.0
MOUTH_LINE_V = 178.5
MOUTH_HALF_WIDTH = 26.0
JAW_DROP_PX = 14.0
JAW_WIDTH = 40.0
HEAD_CENTER = np.array([128.0, 124.0, 200.0])
HEAD_RADIUS = 90.0
HEAD_HALF_HEIGHT = 190.0
INTERIOR_RGB = np.array([0.22, 0.07, 0.07])


@dataclass
class SynthScene:
    """Parameters of one synthetic subject and its capture conditions."""

    seed: int = 0
    frame_size: tuple = (256, 256)
    pose_amplitude: float = 1.0
    gain_amplitude: float = 1.0
    color_amplitude: float = 1.0
    specular: bool = True
    static: bool = False
    opening: np.ndarray | None = None
    topo: FaceTopology = field(default_factory=default_topology)


def base_vertices(topo: FaceTopology) -> np.ndarray:
    """Neutral half-ellipsoid face in reference pose, one vertex per template uv."""
    uv = topo.template_uv
    theta = (uv[:, 0] - 128.0) / HEAD_RADIUS
    h = uv[:, 1] - HEAD_CENTER[1]
    r = HEAD_RADIUS * np.sqrt(np.clip(1.0 - (h / HEAD_HALF_HEIGHT) ** 2, 0.0, None))
    return np.stack([HEAD_CENTER[0] + r * np.sin(theta), uv[:, 1], HEAD_CENTER[2] - r * np.cos(theta)], 1)


def jaw_profile(u) -> np.ndarray:
    """Horizontal falloff of the jaw drop, 1 at the face centre line."""
    return np.exp(-((np.asarray(u, dtype=np.float64) - 128.0) / JAW_WIDTH) ** 2)


def mouth_displacement(topo: FaceTopology) -> np.ndarray:
    """Per-vertex 3D displacement of a fully opened mouth (opening = 1)."""
    uv = topo.template_uv
    d = np.zeros((topo.vertex_count, 3))
    below = uv[:, 1] > MOUTH_LINE_V
    d[below, 1] = JAW_DROP_PX * jaw_profile(uv[below, 0])
    return d


def blendshape_basis(topo: FaceTopology):
    """Small displacement basis; shape 0 is the mouth opening used by the corpus."""
    from .model.blendshapes import BlendshapeBasis

    uv = topo.template_uv
    neutral = base_vertices(topo)
    shapes = np.zeros((4, topo.vertex_count, 3))
    shapes[0] = mouth_displacement(topo)
    near_mouth = np.exp(-(((uv[:, 0] - 128) / 30) ** 2 + ((uv[:, 1] - MOUTH_LINE_V) / 14) ** 2))
    shapes[1, :, 0] = 6.0 * np.sign(uv[:, 0] - 128) * near_mouth      # smile: corners out
    shapes[1, :, 1] = -3.0 * near_mouth
    shapes[2, :, 2] = -5.0 * near_mouth                                 # pucker: lips forward
    brow = np.exp(-((uv[:, 1] - 80) / 12) ** 2) * (uv[:, 1] < 100)
    shapes[3, :, 1] = -5.0 * brow                                       # brow raise
    return BlendshapeBasis(neutral, shapes)


def reference_cylinder(topo: FaceTopology) -> CylinderRef:
    return geom.fit_reference_cylinder(LandmarkFrame(base_vertices(topo)), topo)


def make_albedo(seed: int, size: int = ATLAS_SIZE) -> np.ndarray:
    """Left/right symmetric procedural face texture (mouth closed), values in [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = np.abs(xx - 128.0)
    skin = np.array([0.78, 0.58, 0.48]) + rng.uniform(-0.06, 0.06, 3)
    img = np.ones((size, size, 3)) * skin

    # Smooth symmetric tone variation plus fine symmetric texture.
    tone = np.zeros((size, size))
    for _ in range(4):
        fx, fy = rng.uniform(0.5, 3.0, 2)
        ph = rng.uniform(0, 2 * np.pi)
        tone += np.cos(fx * np.pi * dx / 128.0) * np.cos(fy * np.pi * yy / 256.0 + ph)
    noise = ndimage.gaussian_filter(rng.normal(size=(size, size)), 2.0)
    noise = 0.5 * (noise + mirror_horizontal(noise, 128.0))
    noise /= noise.std() + 1e-12
    img *= (1.0 + 0.03 * tone / 4.0 + 0.02 * noise)[..., None]

    def blob(cx, cy, sx, sy):
        return np.exp(-(((dx - cx) / sx) ** 2 + ((yy - cy) / sy) ** 2))

    def paint(mask, rgb, strength=1.0):
        nonlocal img
        m = np.clip(mask * strength, 0.0, 1.0)[..., None]
        img = img * (1 - m) + np.asarray(rgb) * m

    paint(blob(40, 76, 22, 4), [0.25, 0.17, 0.12], 0.9)                   # brows
    paint(blob(40, 96, 16, 6) > 0.3, [0.92, 0.90, 0.88])                 # eye whites
    paint(blob(40, 96, 5, 5), [0.20, 0.28, 0.35])                         # irises
    paint(blob(0, 118, 8, 22), [0.62, 0.42, 0.34], 0.35)                  # nose bridge
    paint(blob(9, 142, 5, 3), [0.30, 0.18, 0.15], 0.7)                    # nostrils
    paint(blob(55, 150, 18, 14), [0.85, 0.50, 0.45], 0.25)                # cheeks
    lips = (dx < MOUTH_HALF_WIDTH) * np.exp(-((yy - MOUTH_LINE_V) / 8.0) ** 2)
    lips *= np.clip((MOUTH_HALF_WIDTH - dx) / 6.0, 0, 1)
    paint(lips, [0.70, 0.30, 0.30], 0.9)
    paint(blob(0, MOUTH_LINE_V, MOUTH_HALF_WIDTH, 1.2) * (dx < MOUTH_HALF_WIDTH), [0.35, 0.12, 0.12], 0.8)
    img = np.stack([ndimage.gaussian_filter(img[..., c], 0.8) for c in range(3)], -1)
    return np.clip(img, 0.05, 0.95)


def mouth_atlas(albedo, opening: float) -> np.ndarray:
    """Albedo with the jaw region advected down and the mouth gap filled with interior."""
    if opening <= 0:
        return albedo.copy()
    size = albedo.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    shift = opening * JAW_DROP_PX * jaw_profile(xx)
    below = yy > MOUTH_LINE_V
    src_y = np.where(below, np.maximum(yy - shift, MOUTH_LINE_V), yy)
    out = np.stack([ndimage.map_coordinates(albedo[..., c], [src_y, xx], order=1, mode="nearest")
                    for c in range(3)], -1)
    gap = below & (yy < MOUTH_LINE_V + shift) & (np.abs(xx - 128) < MOUTH_HALF_WIDTH)
    # Soft gap edges; depth darkens towards the centre of the opening.
    depth = np.clip((yy - MOUTH_LINE_V) / np.maximum(shift, 1e-6), 0, 1)
    shade = 1.0 - 0.5 * np.sin(np.pi * depth)
    edge = np.clip((MOUTH_HALF_WIDTH - np.abs(xx - 128)) / 4.0, 0, 1)
    m = (gap * edge)[..., None]
    out = out * (1 - m) + (INTERIOR_RGB * shade[..., None]) * m
    return np.clip(out, 0.0, 1.0)


def gain_field(coeffs, size: int = ATLAS_SIZE) -> np.ndarray:
    """Smooth positive luminance gain ``exp(c0 + c1 x + c2 y + c3 x y + c4 x^2)`` over the atlas."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    x = (xx - 128.0) / 128.0
    y = (yy - 128.0) / 128.0
    c = np.asarray(coeffs, dtype=np.float64)
    return np.exp(c[0] + c[1] * x + c[2] * y + c[3] * x * y + c[4] * x * x)


def specular_alpha(center, sigma, peak, size: int = ATLAS_SIZE) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return peak * np.exp(-((xx - center[0]) ** 2 + (yy - center[1]) ** 2) / (2 * sigma ** 2))


def corrupt_atlas(albedo, gain, color_a, color_b, alpha) -> np.ndarray:
    """Forward lighting model: inverse color map, divide luminance by gain, composite specular."""
    c = (albedo - color_b) / color_a
    lit = apply_gain(c, 1.0 / gain)
    a = alpha[..., None]
    return np.clip(a + (1 - a) * lit, 0.0, 1.0)


def background(frame_size, seed: int) -> np.ndarray:
    h, w = frame_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = 0.35 + 0.1 * yy / h + 0.05 * np.sin(xx / 9.0) * np.sin(yy / 11.0)
    return np.stack([base * 0.9, base, base * 1.1], -1).clip(0, 1)


def smooth_series(rng, n, amplitude, n_terms=3, period=(40.0, 200.0)):
    t = np.arange(n, dtype=np.float64)
    out = np.zeros(n)
    for _ in range(n_terms):
        p = rng.uniform(*period)
        out += rng.uniform(-1, 1) * np.sin(2 * np.pi * t / p + rng.uniform(0, 2 * np.pi))
    return amplitude * out / n_terms


@dataclass
class SynthFrame:
    index: int
    image: np.ndarray
    landmarks: LandmarkFrame
    normalized_vertices: np.ndarray
    uv: np.ndarray
    albedo_atlas: np.ndarray
    lit_atlas: np.ndarray
    gain: np.ndarray
    color_a: np.ndarray
    color_b: np.ndarray
    alpha: np.ndarray
    opening: float
    pose: SimilarityTransform
    atlas_mask: np.ndarray


@dataclass
class SynthSequence:
    frames: list
    topo: FaceTopology
    cylinder: CylinderRef
    albedo: np.ndarray
    reference_vertices: np.ndarray
    background: np.ndarray

    def landmark_stream(self):
        return [f.landmarks for f in self.frames]


def _scene_tracks(scene: SynthScene, n_frames: int):
    rng = np.random.default_rng(scene.seed + 1000)
    amp = 0.0 if scene.static else scene.pose_amplitude
    yaw = smooth_series(rng, n_frames, 0.25 * amp)
    pitch = smooth_series(rng, n_frames, 0.12 * amp)
    roll = smooth_series(rng, n_frames, 0.10 * amp)
    tx = smooth_series(rng, n_frames, 15.0 * amp)
    ty = smooth_series(rng, n_frames, 10.0 * amp)
    sc = 1.0 + smooth_series(rng, n_frames, 0.08 * amp)
    for arr, ref in ((yaw, 0.0), (pitch, 0.0), (roll, 0.0), (tx, 0.0), (ty, 0.0), (sc, 1.0)):
        arr += ref - arr[0]
    # Frame 0 is the frontal reference; keep the others visibly off-frontal in yaw.
    gamp = 0.0 if scene.static else scene.gain_amplitude
    g = np.stack([smooth_series(rng, n_frames, a * gamp) for a in (0.25, 0.35, 0.2, 0.1, 0.1)], 1)
    camp = 0.0 if scene.static else scene.color_amplitude
    ca = 1.0 + np.stack([smooth_series(rng, n_frames, 0.06 * camp) for _ in range(3)], 1)
    cb = np.stack([smooth_series(rng, n_frames, 0.02 * camp) for _ in range(3)], 1)
    spec = None
    if scene.specular and not scene.static:
        spec = specular_params(rng)
    return yaw, pitch, roll, tx, ty, sc, g, ca, cb, spec


def specular_params(rng):
    """Random highlight (cx, cy, sigma, peak) on the forehead or nose."""
    return rng.uniform(100, 156), rng.uniform(50, 120), rng.uniform(4.0, 6.0), rng.uniform(0.4, 0.6)


def pose_transform(yaw, pitch, roll, tx, ty, scale) -> SimilarityTransform:
    """Similarity acting about the head centre, expressed in frame coordinates."""
    rot = Rotation.from_euler("yxz", [yaw, pitch, roll]).as_matrix()
    t = HEAD_CENTER - scale * rot @ HEAD_CENTER + np.array([tx, ty, 0.0])
    return SimilarityTransform(float(scale), rot, t)


def iter_face_frames(scene: SynthScene, n_frames: int, render: bool = True):
    """Yield :class:`SynthFrame` objects one at a time (keeps memory flat for long corpora)."""
    topo = scene.topo
    neutral = base_vertices(topo)
    cyl = reference_cylinder(topo)
    albedo = make_albedo(scene.seed)
    disp = mouth_displacement(topo)
    bg = background(scene.frame_size, scene.seed)
    opening = np.zeros(n_frames) if scene.opening is None else np.clip(np.asarray(scene.opening, float), 0, 1)
    if len(opening) < n_frames:
        raise ValueError("opening series shorter than the requested frame count")
    yaw, pitch, roll, tx, ty, sc, g, ca, cb, spec = _scene_tracks(scene, n_frames)
    h, w = scene.frame_size
    for t in range(n_frames):
        verts = neutral + opening[t] * disp
        uv = geom.cylinder_uv(verts, cyl)
        atlas = mouth_atlas(albedo, opening[t])
        gain = gain_field(g[t])
        alpha = np.zeros((ATLAS_SIZE, ATLAS_SIZE))
        if spec is not None:
            alpha = specular_alpha(spec[:2], spec[2], spec[3])
        lit = corrupt_atlas(atlas, gain, ca[t], cb[t], alpha)
        pose = pose_transform(yaw[t], pitch[t], roll[t], tx[t], ty[t], sc[t])
        posed = pose.apply(verts)
        image = None
        if render:
            out = warp_triangles_render(lit, uv, posed, topo, (h, w))
            image = np.where(out.valid_mask[..., None], out.pixels, bg)
        mask = geom.rasterize_mask(uv, topo.triangles, (ATLAS_SIZE, ATLAS_SIZE))
        yield SynthFrame(t, image, LandmarkFrame(posed, t / FPS), verts, uv, atlas, lit, gain,
                         ca[t].copy(), cb[t].copy(), alpha, float(opening[t]), pose, mask)


def warp_triangles_render(atlas, uv, posed, topo: FaceTopology, frame_size) -> TextureAtlas:
    """Render an atlas onto the image plane at the given posed vertices (orthographic)."""
    return geom.warp_triangles(atlas, uv, posed[:, :2], topo.triangles, frame_size,
                               depth=posed[:, 2], cull_backfaces=True)


def gen_face_sequence(scene: SynthScene, n_frames: int, render: bool = True) -> SynthSequence:
    frames = list(iter_face_frames(scene, n_frames, render))
    topo = scene.topo
    return SynthSequence(frames, topo, reference_cylinder(topo), make_albedo(scene.seed),
                         base_vertices(topo), background(scene.frame_size, scene.seed))


# --- audio <-> mouth law -------------------------------------------------------------

ENVELOPE_SMOOTH_S = 0.03
NOISE_FLOOR = 0.002


def syllable_envelope(rng, duration: float, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Random sequence of syllables and pauses, amplitude in [0, 1] with raised-cosine ramps."""
    n = int(round(duration * sample_rate))
    env = np.zeros(n)
    t = 0.0
    while t < duration:
        if rng.random() < 0.3:
            t += rng.uniform(0.1, 0.4)
            continue
        length = rng.uniform(0.12, 0.35)
        amp = rng.uniform(0.25, 1.0)
        a, b = int(t * sample_rate), min(int((t + length) * sample_rate), n)
        if b > a:
            seg = np.sin(np.pi * np.linspace(0, 1, b - a)) ** 0.5
            env[a:b] = np.maximum(env[a:b], amp * seg)
        t += length + rng.uniform(0.02, 0.15)
    return env


def opening_from_envelope(envelope, n_frames: int, fps: float = FPS, sample_rate: int = SAMPLE_RATE):
    """Mouth opening at frame times: Gaussian-smoothed envelope (sigma 30 ms), clipped to [0, 1]."""
    smooth = ndimage.gaussian_filter1d(np.asarray(envelope, float), ENVELOPE_SMOOTH_S * sample_rate,
                                       mode="nearest")
    idx = np.clip(np.round(np.arange(n_frames) / fps * sample_rate).astype(np.int64), 0, len(smooth) - 1)
    return np.clip(smooth[idx], 0.0, 1.0)


def voiced_carrier(rng, n, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    t = np.arange(n) / sample_rate
    f0 = 140.0 * (1 + 0.05 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 6.28)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    sig = sum(np.sin(k * phase) / k for k in range(1, 8))
    return sig / np.abs(sig).max()


@dataclass
class AudioVisualCorpus:
    audio: np.ndarray
    sample_rate: int
    envelope: np.ndarray
    opening: np.ndarray
    timestamps: np.ndarray
    sequence: SynthSequence | None
    normalized_vertices: np.ndarray
    albedo_atlases: np.ndarray | None
    blendshapes: np.ndarray
    scene: SynthScene


def gen_audio_visual_corpus(seed: int, n_frames: int, render: bool = True, silent: bool = False,
                            max_amplitude: bool = False, keep_atlases: bool = True,
                            scene_overrides: dict | None = None) -> AudioVisualCorpus:
    """Amplitude-modulated voiced tone whose smoothed envelope drives the mouth opening.

    A constant noise floor keeps "silent" stretches from being digitally
    zero. Blendshape coefficient 0 equals the opening; the others are zero.
    """
    rng = np.random.default_rng(seed)
    duration = n_frames / FPS
    n = int(round(duration * SAMPLE_RATE))
    if silent:
        env = np.zeros(n)
    elif max_amplitude:
        env = np.ones(n)
    else:
        env = syllable_envelope(rng, duration)
    audio = 0.5 * env * voiced_carrier(rng, n) + NOISE_FLOOR * rng.standard_normal(n)
    opening = opening_from_envelope(env, n_frames)
    scene = SynthScene(seed=seed, opening=opening, **(scene_overrides or {}))
    topo = scene.topo
    if render:
        seq = gen_face_sequence(scene, n_frames, render=True)
        verts = np.stack([f.normalized_vertices for f in seq.frames])
        atlases = np.stack([f.albedo_atlas for f in seq.frames]).astype(np.float32) if keep_atlases else None
    else:
        seq = None
        neutral, disp = base_vertices(topo), mouth_displacement(topo)
        verts = neutral[None] + opening[:, None, None] * disp[None]
        albedo = make_albedo(seed)
        atlases = None
        if keep_atlases:
            atlases = np.stack([mouth_atlas(albedo, o) for o in opening]).astype(np.float32)
    bs = np.zeros((n_frames, 4))
    bs[:, 0] = opening
    return AudioVisualCorpus(audio.astype(np.float64), SAMPLE_RATE, env, opening, np.arange(n_frames) / FPS,
                             seq, verts, atlases, bs, scene)
