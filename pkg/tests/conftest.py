import numpy as np
import pytest

from lowlight_vo import _kernels
from lowlight_vo.geometry import Pose, pose_from_twist


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotvec(rng, max_angle=np.pi):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0.0, max_angle)


def random_pose(rng, max_angle=np.pi * 0.95, scale=5.0) -> Pose:
    return pose_from_twist(np.r_[random_rotvec(rng, max_angle), scale * rng.standard_normal(3)])


BACKENDS = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba":
        monkeypatch.setattr(_kernels, "preintegrate_kernel", _kernels._preintegrate_numba_entry)
        monkeypatch.setattr(_kernels, "depthwise_conv", _kernels.depthwise_conv_numba)
    else:
        monkeypatch.setattr(_kernels, "preintegrate_kernel", _kernels.preintegrate_numpy)
        monkeypatch.setattr(_kernels, "depthwise_conv", _kernels.depthwise_conv_numpy)
    return request.param
