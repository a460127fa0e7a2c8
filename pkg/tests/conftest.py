import numpy as np
import pytest
from hypothesis import strategies as st

from endodepth.camera import CameraIntrinsics, StereoRig
from endodepth.rigid import RigidTransform, rotvec_to_matrix

ENDO_DIST = dict(k1=-0.12, k2=0.03, p1=4e-4, p2=-3e-4, k3=0.0)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return RigidTransform.from_quaternion(q).rotation


def random_transform(rng, scale=100.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, 3))


@st.composite
def rigid_transforms(draw, max_t=1e3):
    q = np.array(draw(st.lists(st.floats(-1, 1), min_size=4, max_size=4)))
    if np.linalg.norm(q) < 1e-3:
        q = np.array([0.0, 0.0, 0.0, 1.0])
    t = draw(st.lists(st.floats(-max_t, max_t), min_size=3, max_size=3))
    return RigidTransform.from_quaternion(q / np.linalg.norm(q), t)


def looking_pose(rng, distance=80.0, tilt_deg=20.0):
    """World -> camera pose viewing the world origin from about ``distance``."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = rotvec_to_matrix(axis * np.radians(rng.uniform(0, tilt_deg)))
    t = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), distance])
    return RigidTransform(R, t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intr():
    return CameraIntrinsics(1100.0, 1100.0, 960.0, 540.0, image_size=(1920, 1080), **ENDO_DIST)


@pytest.fixture
def ideal():
    return CameraIntrinsics(1000.0, 1000.0, 500.0, 500.0, image_size=(1000, 1000))


@pytest.fixture
def rig(intr):
    return StereoRig(intr, intr, RigidTransform(np.eye(3), [-4.0, 0.0, 0.0]))


# --- acceptance summary: one PASS/FAIL line per criterion -----------------------

_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    if report.when == "call" or report.failed:
        prev = _criteria.get(name)
        _criteria[name] = "FAIL" if report.failed or prev == "FAIL" else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _criteria.items():
        terminalreporter.write_line(f"{outcome}  {name}")
