import numpy as np
import pytest

from talkface import geom, synthkit
from talkface.geom import TextureAtlas
from talkface.topology import default_topology

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def topo():
    return default_topology()


@pytest.fixture(scope="session")
def cyl(topo):
    return synthkit.reference_cylinder(topo)


@pytest.fixture(scope="session")
def ref_uv(topo, cyl):
    return geom.cylinder_uv(synthkit.base_vertices(topo), cyl)


@pytest.fixture(scope="session")
def atlas_mask(topo, ref_uv):
    return geom.rasterize_mask(ref_uv, topo.triangles, (256, 256))


@pytest.fixture(scope="session")
def skin(topo, ref_uv):
    return geom.atlas_skin_mask(ref_uv, topo)


def masked_atlas(pixels, mask):
    return TextureAtlas(np.where(mask[..., None], np.clip(pixels, 0, 1), 0.0), mask)


@pytest.fixture(scope="session")
def albedo_atlas(atlas_mask):
    return masked_atlas(synthkit.make_albedo(0), atlas_mask)


@pytest.fixture(scope="session")
def synth_sequence():
    """Six frames with pose, lighting and specular variation (seed 11)."""
    return synthkit.gen_face_sequence(synthkit.SynthScene(seed=11), 6)
