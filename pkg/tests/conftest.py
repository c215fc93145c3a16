"""Shared fixtures and random generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from geofloc.geom import CameraIntrinsics, RigidPose3

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng: np.random.Generator, spread: float = 5.0) -> RigidPose3:
    return RigidPose3(random_rotation(rng), rng.uniform(-spread, spread, 3))


def random_intrinsics(rng: np.random.Generator, width: int = 64, height: int = 48) -> CameraIntrinsics:
    return CameraIntrinsics(
        rng.uniform(20, 800), rng.uniform(20, 800),
        rng.uniform(0, width - 1), rng.uniform(0, height - 1), width, height,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
