import numpy as np
import pytest

from mvpolicy.geometry import ColoredPointCloud, WorkspaceBox, default_camera_rig


@pytest.fixture(scope="session")
def unit_box():
    return WorkspaceBox((0.0, 0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def rig256(unit_box):
    return default_camera_rig(unit_box, image_size=256)


@pytest.fixture(scope="session")
def rig64():
    return default_camera_rig(WorkspaceBox((0.0, 0.0, 0.0), 0.48), image_size=64)


def random_cloud(rng, n, box: WorkspaceBox, margin: float = 0.005) -> ColoredPointCloud:
    half = box.half - margin
    pts = rng.uniform(-half, half, size=(n, 3)) + np.asarray(box.center)
    return ColoredPointCloud(pts, rng.random((n, 3), dtype=np.float32))
