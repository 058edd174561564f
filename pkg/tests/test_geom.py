import numpy as np
import pytest
from scipy import ndimage
from scipy.spatial.transform import Rotation

from talkface import geom, synthkit
from talkface.errors import AlignmentDegenerateError, DegenerateCylinderError, ShapeError, UndefinedAzimuthError
from talkface.geom import CylinderRef, SimilarityTransform, TextureAtlas
from talkface.landmarks import LandmarkFrame
from talkface.metrics import ssim_masked


def _random_similarity(rng):
    rot = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
    return SimilarityTransform(float(rng.uniform(0.5, 2.0)), rot, rng.normal(0, 50, 3))


def test_umeyama_exact_recovery():
    rng = np.random.default_rng(0)
    for _ in range(10):
        src = rng.normal(0, 10, (50, 3))
        tf = _random_similarity(rng)
        est = geom.umeyama_align(src, tf.apply(src))
        assert abs(est.scale - tf.scale) < 1e-9
        np.testing.assert_allclose(est.rotation, tf.rotation, atol=1e-9)
        np.testing.assert_allclose(est.translation, tf.translation, atol=1e-8)


def test_umeyama_never_reflects():
    rng = np.random.default_rng(1)
    src = rng.normal(0, 1, (30, 3))
    dst = src * np.array([-1.0, 1.0, 1.0])
    est = geom.umeyama_align(src, dst)
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


def test_umeyama_minimizes_residual_under_noise():
    rng = np.random.default_rng(2)
    src = rng.normal(0, 10, (100, 3))
    dst = _random_similarity(rng).apply(src) + rng.normal(0, 0.1, src.shape)
    est = geom.umeyama_align(src, dst)
    best = geom.alignment_residual(src, dst, est)
    for _ in range(20):
        pert = SimilarityTransform(est.scale * (1 + rng.normal(0, 1e-3)),
                                   Rotation.from_rotvec(rng.normal(0, 1e-3, 3)).as_matrix() @ est.rotation,
                                   est.translation + rng.normal(0, 1e-2, 3))
        assert geom.alignment_residual(src, dst, pert) >= best


def test_inverse_round_trip():
    rng = np.random.default_rng(3)
    tf = _random_similarity(rng)
    p = rng.normal(0, 5, (10, 3))
    np.testing.assert_allclose(tf.inverse().apply(tf.apply(p)), p, atol=1e-10)


@pytest.mark.parametrize("pts", [np.zeros((5, 3)), np.outer(np.arange(6.0), [1, 2, 3]), np.ones((2, 3))])
def test_umeyama_degenerate(pts):
    with pytest.raises(AlignmentDegenerateError):
        geom.umeyama_align(pts, pts)


def test_umeyama_shape_mismatch():
    with pytest.raises(ShapeError):
        geom.umeyama_align(np.zeros((5, 3)), np.zeros((4, 3)))


def test_cylinder_fit_recovers_template_uv(topo):
    # Vertices on a vertical cylinder of radius 90 laid out from the template uv.
    uv = topo.template_uv
    theta = (uv[:, 0] - 128) / 90.0
    v = np.stack([128 + 90 * np.sin(theta), uv[:, 1], 200 - 90 * np.cos(theta)], axis=1)
    cyl = geom.fit_reference_cylinder(LandmarkFrame(v), topo)
    assert cyl.radius == pytest.approx(90.0, rel=1e-6)
    np.testing.assert_allclose(cyl.axis_point[[0, 2]], [128, 200], atol=1e-5)
    np.testing.assert_allclose(geom.cylinder_uv(v, cyl), uv, atol=1e-5)


def test_cylinder_anchor_pixels(topo, cyl):
    v = synthkit.base_vertices(topo)
    uv = geom.cylinder_uv(np.stack([v[topo.left_eye_indices].mean(0), v[topo.right_eye_indices].mean(0),
                                    v[topo.nose_tip_indices].mean(0)]), cyl)
    np.testing.assert_allclose(uv[:, 0], [88, 168, 128], atol=1.0)


def test_cylinder_dict_round_trip(cyl):
    back = CylinderRef.from_dict(cyl.to_dict())
    for k, val in cyl.to_dict().items():
        np.testing.assert_array_equal(np.asarray(getattr(back, k)), np.asarray(val))


def test_yaw_estimate(topo):
    v = synthkit.base_vertices(topo)
    c = v.mean(0)
    for yaw in (-0.3, 0.0, 0.15):
        rot = Rotation.from_rotvec([0, yaw, 0]).as_matrix()
        vy = (v - c) @ rot.T + c
        assert abs(abs(geom.estimate_yaw(vy, topo)) - abs(yaw)) < 1e-6


def test_select_reference_frame_prefers_frontal(topo):
    v = synthkit.base_vertices(topo)
    c = v.mean(0)
    frames = [LandmarkFrame((v - c) @ Rotation.from_rotvec([0, y, 0]).as_matrix().T + c)
              for y in (0.3, -0.05, 0.08, 0.2)]
    assert geom.select_reference_frame(frames, topo) == 1


def test_affine_warp_matches_analytic():
    # Two triangles covering a square; the warp is a single affine map.
    img = np.linspace(0, 1, 64)[None, :, None] * np.ones((64, 1, 1))
    src = np.array([[0, 0], [63, 0], [63, 63], [0, 63]], dtype=float)
    dst = src * 0.5 + 10
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    out = geom.warp_triangles(img, src, dst, tris, (64, 64))
    ys, xs = np.nonzero(out.valid_mask)
    expected = np.clip((xs - 10) * 2 / 63, 0, 1)
    np.testing.assert_allclose(out.pixels[ys, xs, 0], expected, atol=1e-9)
    assert out.valid_mask.sum() == 32 * 32


def test_depth_buffer_selects_nearest():
    src = np.array([[0, 0], [9, 0], [0, 9]], dtype=float)
    coords = np.concatenate([src, src])
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    depth = np.array([5.0, 5, 5, 1, 1, 1])
    _, _, covered, tid = geom.rasterize_coords(coords, coords, tris, (10, 10), depth=depth)
    assert (tid[covered] == 1).all()
    depth = np.array([1.0, 1, 1, 5, 5, 5])
    _, _, covered, tid = geom.rasterize_coords(coords, coords, tris, (10, 10), depth=depth)
    assert (tid[covered] == 0).all()


def test_backface_culling():
    src = np.array([[0, 0], [9, 0], [0, 9]], dtype=float)
    dst = src[:, ::-1].copy()  # swapping axes flips winding
    _, _, covered, _ = geom.rasterize_coords(src, dst, np.array([[0, 1, 2]]), (10, 10), cull_backfaces=True)
    assert not covered.any()


def test_texture_atlas_validation():
    with pytest.raises(ValueError):
        TextureAtlas(np.full((4, 4, 3), 1.5), np.ones((4, 4), bool))
    with pytest.raises(ShapeError):
        TextureAtlas(np.zeros((4, 4, 3)), np.ones((3, 4), bool))


def test_render_unroll_round_trip():
    seq = synthkit.gen_face_sequence(synthkit.SynthScene(seed=3, specular=False), 3)
    ref = seq.frames[0].landmarks
    for f in seq.frames:
        v, _ = geom.normalize_pose(f.landmarks, ref, seq.topo)
        np.testing.assert_allclose(v, f.normalized_vertices, atol=1e-6)
        at = geom.unroll_texture(f.image, v, seq.cylinder, seq.topo, f.landmarks.vertices)
        assert ssim_masked(at.pixels, f.lit_atlas, at.valid_mask) > 0.95


def test_umeyama_identity_and_known_transform():
    rng = np.random.default_rng(4)
    src = rng.normal(0, 30, (468, 3))
    est = geom.umeyama_align(src, src)
    assert est.scale == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(est.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(est.translation, 0.0, atol=1e-10)
    tf = SimilarityTransform(1.3, Rotation.from_rotvec([0, 0.4, 0]).as_matrix(), np.array([5.0, -2.0, 1.0]))
    est = geom.umeyama_align(src, tf.apply(src))
    assert abs(est.scale - 1.3) < 1e-9
    np.testing.assert_allclose(est.rotation, tf.rotation, atol=1e-9)
    np.testing.assert_allclose(est.translation, tf.translation, atol=1e-9)


def test_umeyama_beats_random_transforms():
    rng = np.random.default_rng(5)
    src = rng.normal(0, 10, (60, 3))
    dst = _random_similarity(rng).apply(src) + rng.normal(0, 1.0, src.shape)
    best = geom.alignment_residual(src, dst, geom.umeyama_align(src, dst))
    for _ in range(1000):
        assert geom.alignment_residual(src, dst, _random_similarity(rng)) >= best


def test_cylinder_exact_fit_radius_100(topo):
    uv = topo.template_uv
    theta = (uv[:, 0] - 128) / 100.0
    v = np.stack([50 + 100 * np.sin(theta), uv[:, 1], 300 - 100 * np.cos(theta)], axis=1)
    cyl = geom.fit_reference_cylinder(LandmarkFrame(v), topo)
    assert cyl.radius == pytest.approx(100.0, rel=1e-9)
    assert cyl.axis_point[0] == pytest.approx(50.0, abs=1e-6)
    d = np.hypot(v[:, 0] - cyl.axis_point[0], v[:, 2] - cyl.axis_point[2])
    assert np.abs(d - cyl.radius).max() < 1e-6


def test_cylinder_axis_beats_shifted_axes(topo):
    v = synthkit.base_vertices(topo)
    cyl = geom.fit_reference_cylinder(LandmarkFrame(v), topo)
    pts = v[:, [0, 2]]
    c = cyl.axis_point[[0, 2]]
    best = geom.circle_fit_residual(pts, c)
    for dx in (-10, 0, 10):
        for dz in (-10, 0, 10):
            if dx or dz:
                assert geom.circle_fit_residual(pts, c + [dx, dz]) > best


def test_cylinder_scale_invariant_anchors(topo, cyl):
    v = synthkit.base_vertices(topo)
    big = geom.fit_reference_cylinder(LandmarkFrame(2 * v), topo)
    assert big.radius == pytest.approx(2 * cyl.radius, rel=1e-6)
    np.testing.assert_allclose(geom.cylinder_uv(2 * v, big), geom.cylinder_uv(v, cyl), atol=1e-6)


def test_cylinder_degenerate_inputs(topo, cyl):
    with pytest.raises(DegenerateCylinderError):
        geom.fit_reference_cylinder(LandmarkFrame(np.zeros((468, 3))), topo)
    with pytest.raises(UndefinedAzimuthError):
        geom.cylinder_uv(cyl.axis_point[None, :], cyl)


def test_cylinder_uv_rotation_and_monotonicity(topo, cyl):
    v = synthkit.base_vertices(topo)[topo.nose_tip_indices[:1]]
    c = cyl.axis_point
    rot = Rotation.from_rotvec([0, 0.1, 0]).as_matrix()
    uv0 = geom.cylinder_uv(v, cyl)
    uv1 = geom.cylinder_uv((v - c) @ rot.T + c, cyl)
    assert abs(abs(uv1[0, 0] - uv0[0, 0]) - abs(cyl.u_scale) * 0.1) < 1e-9
    assert uv1[0, 1] == pytest.approx(uv0[0, 1], abs=1e-9)
    ang = np.linspace(-1.2, 1.2, 50)
    ring = np.stack([c[0] + 80 * np.sin(ang), np.full_like(ang, 100), c[2] + cyl.facing * 80 * np.cos(ang)], 1)
    assert np.all(np.diff(geom.cylinder_uv(ring, cyl)[:, 0]) > 0)


def test_template_uv_reproduced_on_frontal_vertices(topo, cyl):
    uv = geom.cylinder_uv(synthkit.base_vertices(topo), cyl)
    frontal = np.abs(topo.template_uv[:, 0] - 128) < 80
    assert np.abs(uv - topo.template_uv)[frontal].max() < 0.5


def test_normalize_pose_identity_rigid_and_mouth(topo):
    ref = LandmarkFrame(synthkit.base_vertices(topo))
    v, tf = geom.normalize_pose(ref, ref, topo)
    np.testing.assert_allclose(v, ref.vertices, atol=1e-9)
    np.testing.assert_allclose(tf.rotation, np.eye(3), atol=1e-12)
    motion = SimilarityTransform(1.0, Rotation.from_rotvec([0, 0.3, 0]).as_matrix(), np.array([10.0, 5.0, 0.0]))
    disp = synthkit.mouth_displacement(topo)
    moved = LandmarkFrame(motion.apply(ref.vertices + disp))
    v, _ = geom.normalize_pose(moved, ref, topo)
    rigid = topo.rigid_indices
    assert np.sqrt(((v[rigid] - ref.vertices[rigid]) ** 2).sum(1).mean()) < 1e-6
    np.testing.assert_allclose(v - ref.vertices, disp, atol=1e-6)
    # Normalizing an already-normalized frame is the identity.
    _, tf2 = geom.normalize_pose(LandmarkFrame(v), ref, topo)
    np.testing.assert_allclose(tf2.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(tf2.translation, 0.0, atol=1e-9)
    assert tf2.scale == pytest.approx(1.0, abs=1e-9)


def _grid_mesh(n=8, size=64):
    xs = np.linspace(0, size - 1, n)
    coords = np.array([[x, y] for y in xs for x in xs])
    tris = []
    for r in range(n - 1):
        for c in range(n - 1):
            i = r * n + c
            tris += [[i, i + 1, i + n + 1], [i, i + n + 1, i + n]]
    return coords, np.array(tris)


def test_warp_identity_and_constant():
    coords, tris = _grid_mesh()
    img = np.random.default_rng(0).random((64, 64, 3))
    out = geom.warp_triangles(img, coords, coords, tris, (64, 64))
    np.testing.assert_allclose(out.pixels[out.valid_mask], img[out.valid_mask], atol=1e-12)
    const = geom.warp_triangles(np.full((64, 64, 3), 0.37), coords, coords * 0.8 + 5, tris, (64, 64))
    np.testing.assert_allclose(const.pixels[const.valid_mask], 0.37, atol=1e-12)


def test_warp_translation_on_checkerboard():
    coords, tris = _grid_mesh()
    yy, xx = np.mgrid[0:64, 0:64]
    board = (((xx // 4) + (yy // 4)) % 2).astype(float)[..., None].repeat(3, 2)
    out = geom.warp_triangles(board, coords, coords + [8, 0], tris, (64, 72))
    ys, xs = np.nonzero(out.valid_mask)
    np.testing.assert_allclose(out.pixels[ys, xs], board[ys, xs - 8], atol=1e-9)


def test_warp_round_trip_smooth_image():
    coords, tris = _grid_mesh()
    yy, xx = np.mgrid[0:64, 0:64] / 63.0
    img = np.stack([xx, yy, 0.5 * (xx + yy)], -1)
    rng = np.random.default_rng(1)
    moved = coords + rng.uniform(-2, 2, coords.shape)
    b = geom.warp_triangles(img, coords, moved, tris, (64, 64))
    back = geom.warp_triangles(b.pixels, moved, coords, tris, (64, 64))
    inner = np.zeros((64, 64), bool)
    inner[6:-6, 6:-6] = True
    ok = back.valid_mask & inner & ndimage.binary_erosion(b.valid_mask, iterations=2)
    assert np.abs(back.pixels - img)[ok].max() < 0.02


def test_unroll_mouth_open_vs_closed(topo, cyl):
    opening = np.array([0.0, 1.0])
    seq = synthkit.gen_face_sequence(synthkit.SynthScene(seed=6, static=True, opening=opening), 2)
    ats = [geom.unroll_texture(f.image, f.normalized_vertices, cyl, topo, f.landmarks.vertices) for f in seq.frames]
    x, y, w, h = topo.lip_crop
    crop = np.zeros((256, 256), bool)
    crop[y:y + h, x:x + w] = True
    both = ats[0].valid_mask & ats[1].valid_mask
    diff = np.abs(ats[0].pixels - ats[1].pixels).mean(-1)
    assert diff[both & crop].mean() > 0.01
    assert diff[both & ~crop].mean() < 0.02
