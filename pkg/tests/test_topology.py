import numpy as np
import pytest

from talkface.errors import FormatError
from talkface.topology import ATLAS_SIZE, FaceTopology, default_topology, load_topology, save_topology


def test_default_topology_invariants(topo):
    assert topo.vertex_count == 468
    assert topo.triangles.max() < 468
    assert topo.rigid_indices.size > 0
    x, y, w, h = topo.lip_crop
    assert (w, h) == (128, 128)
    assert 0 <= x and x + w <= ATLAS_SIZE and 0 <= y and y + h <= ATLAS_SIZE


def test_mirror_map_is_involution(topo):
    perm = topo.mirror_map()
    np.testing.assert_array_equal(perm[perm], np.arange(468))
    flat = topo.mirror_pairs.ravel()
    assert len(np.unique(flat)) == len(flat)


def test_mirror_pairs_reflect_template_uv(topo):
    uv = topo.template_uv
    a, b = topo.mirror_pairs.T
    np.testing.assert_allclose(uv[a, 0] + uv[b, 0], 256.0)
    np.testing.assert_allclose(uv[a, 1], uv[b, 1])


def test_mouth_and_eyes_are_not_skin(topo):
    assert not topo.skin_vertex_mask[topo.mouth_indices].any()
    assert topo.skin_vertex_mask.sum() < 468


def test_save_load_round_trip(tmp_path, topo):
    p = tmp_path / "topo.txt"
    save_topology(topo, p)
    back = load_topology(p)
    np.testing.assert_array_equal(back.triangles, topo.triangles)
    np.testing.assert_array_equal(back.mirror_pairs, topo.mirror_pairs)
    np.testing.assert_array_equal(back.skin_vertex_mask, topo.skin_vertex_mask)
    np.testing.assert_array_equal(back.template_uv, topo.template_uv)
    for name in ("rigid", "mouth", "left_eye", "right_eye", "nose_tip", "chin"):
        np.testing.assert_array_equal(getattr(back, f"{name}_indices"), getattr(topo, f"{name}_indices"))
    assert back.lip_crop == topo.lip_crop


def test_load_rejects_wrong_magic(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("something-else\nversion 1\nend\n")
    with pytest.raises(FormatError):
        load_topology(p)


def test_load_rejects_future_version(tmp_path, topo):
    p = tmp_path / "t.txt"
    save_topology(topo, p)
    p.write_text(p.read_text().replace("version 1", "version 9", 1))
    with pytest.raises(FormatError):
        load_topology(p)


def _kwargs(topo, **over):
    d = dict(triangles=topo.triangles, rigid_indices=topo.rigid_indices, mouth_indices=topo.mouth_indices,
             skin_vertex_mask=topo.skin_vertex_mask, mirror_pairs=topo.mirror_pairs, lip_crop=topo.lip_crop,
             left_eye_indices=topo.left_eye_indices, right_eye_indices=topo.right_eye_indices,
             nose_tip_indices=topo.nose_tip_indices, chin_indices=topo.chin_indices)
    d.update(over)
    return d


@pytest.mark.parametrize("override", [
    {"triangles": np.array([[0, 1, 468]])},
    {"rigid_indices": np.array([], dtype=int)},
    {"mirror_pairs": np.array([[0, 1], [1, 2]])},
    {"lip_crop": (200, 200, 128, 128)},
])
def test_invalid_topologies_rejected(override):
    topo = default_topology()
    with pytest.raises(FormatError):
        FaceTopology(**_kwargs(topo, **override))
