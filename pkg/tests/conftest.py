import math

import numpy as np
import pytest

from placekit.dataset_io import CameraCalib, LabeledObject, SceneAnnotation
from placekit.fixture import generate_fixture
from placekit.geometry import Box3D, project_box

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def kitti_calib():
    P = np.array([[721.5377, 0.0, 609.5593, 0.0],
                  [0.0, 721.5377, 172.854, 0.0],
                  [0.0, 0.0, 1.0, 0.0]])
    return CameraCalib(P=P, image_size=(1242, 375))


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """The 50-scene straight-road corpus, generated once per session."""
    root = tmp_path_factory.mktemp("fixture")
    cfg = generate_fixture(root, n_scenes=50, cars_per_scene=4, seed=0)
    return cfg


def make_scene(calib, boxes, scene_id="s"):
    objs = [LabeledObject.from_box(b, project_box(calib, b) or (0, 0, 1, 1)) for b in boxes]
    return SceneAnnotation(scene_id, calib, objs)


def car(x, z, theta=-math.pi / 2, y=1.6, h=1.5, w=1.6, l=3.9):
    return Box3D.make(x, y, z, h, w, l, theta)


def pytest_runtest_makereport(item, call):
    if call.when == "call" and item.get_closest_marker("acceptance"):
        doc = (item.obj.__doc__ or item.name).strip().splitlines()[0]
        ok = call.excinfo is None
        _ACCEPTANCE.append((ok, doc))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for ok, doc in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {doc}")
