import os

import numpy as np
import pytest

os.environ.setdefault('MPLBACKEND', 'Agg')

from stereo_pose.geometry import CameraIntrinsics, Pose, StereoRig, random_rotation
from stereo_pose.meshes import default_library, make_box


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def K():
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def small_K():
    return CameraIntrinsics(fx=300.0, fy=300.0, cx=79.5, cy=59.5, width=160, height=120)


@pytest.fixture
def rig(K):
    return StereoRig.rectified_pair(K, 50.0)


@pytest.fixture
def small_rig(small_K):
    return StereoRig.rectified_pair(small_K, 50.0)


@pytest.fixture
def cube():
    return make_box(100.0, 100.0, 100.0, subdiv=2, name='cube')


@pytest.fixture(scope='session')
def library():
    return default_library(n_regions=16)


def random_pose(rng:np.random.Generator, depth:float=1000.0, spread:float=50.0) -> Pose:
    t = np.array([rng.uniform(-spread, spread), rng.uniform(-spread, spread), depth + rng.uniform(-spread, spread)])
    return Pose(random_rotation(rng), t)
