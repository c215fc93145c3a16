"""Pinhole unprojection, rigid transforms, depth clouds and frustums."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geofloc.errors import InvalidDepthError, InvalidPoseError, InvalidRangeError, OutOfBoundsError
from geofloc.geom import (
    CameraIntrinsics,
    PointCloud,
    RigidPose3,
    camera_pose_from_planar,
    depth_to_cloud,
    frustum_of,
    project,
    to_camera,
    to_world,
    unproject,
    unproject_many,
    yaw_rotation,
)

from conftest import random_intrinsics, random_pose


def _oracle_unproject(u, v, d, K):
    # K^-1 [u d, v d, d]^T solved as a linear system
    return np.linalg.solve(K.matrix, np.array([u * d, v * d, d]))


UNIT = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 1, 1)


class TestUnproject:
    def test_principal_ray_identity_intrinsics(self):
        assert np.array_equal(unproject(0, 0, 1.0, UNIT), [0.0, 0.0, 1.0])

    def test_principal_point_maps_to_axis(self):
        K = CameraIntrinsics(300.0, 310.0, 12.5, 7.25, 40, 30)
        assert np.allclose(unproject(K.cx, K.cy, 7.5, K), [0.0, 0.0, 7.5], atol=0)

    def test_worked_example(self):
        K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
        got = unproject(420, 240, 2.0, K)
        assert np.allclose(got, _oracle_unproject(420, 240, 2.0, K), rtol=0, atol=1e-15)
        assert np.allclose(got, [0.4, 0.0, 2.0], atol=1e-15)

    @pytest.mark.parametrize("d", [0.0, -1.0])
    def test_nonpositive_depth(self, d):
        with pytest.raises(InvalidDepthError):
            unproject(0, 0, d, UNIT)

    @pytest.mark.parametrize("uv", [(-1, 0), (0, -0.5), (1, 0), (0, 1)])
    def test_out_of_bounds(self, uv):
        with pytest.raises(OutOfBoundsError):
            unproject(*uv, 1.0, UNIT)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_matrix_inverse_oracle(self, seed):
        rng = np.random.default_rng(seed)
        K = random_intrinsics(rng)
        u, v = rng.uniform(0, K.width), rng.uniform(0, K.height)
        d = rng.uniform(0.1, 20)
        assert np.allclose(unproject(u, v, d, K), _oracle_unproject(u, v, d, K), rtol=1e-12, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_project_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        K = random_intrinsics(rng)
        u, v = rng.uniform(0, K.width), rng.uniform(0, K.height)
        d = rng.uniform(0.1, 20)
        back = project(unproject(u, v, d, K), K)
        ref = np.array([u, v, d])
        assert np.all(np.abs(back - ref) <= 1e-9 * np.maximum(np.abs(ref), 1.0))


class TestRigidPose:
    def test_rejects_non_rotation(self):
        with pytest.raises(InvalidPoseError):
            RigidPose3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
        with pytest.raises(InvalidPoseError):
            RigidPose3(np.eye(3) * 1.001, np.zeros(3))

    def test_inverse(self, rng):
        P = random_pose(rng)
        p = rng.normal(size=3)
        assert np.allclose(to_world(to_world(p, P), P.inverse()), p, atol=1e-12)
        assert np.allclose(to_camera(to_world(p, P), P), p, atol=1e-12)

    def test_matrix_round_trip(self, rng):
        P = random_pose(rng)
        assert RigidPose3.from_matrix(P.matrix) == P


class TestToWorld:
    def test_identity(self):
        assert np.array_equal(to_world([0, 0, 1], RigidPose3.identity()), [0.0, 0.0, 1.0])

    def test_yaw_quarter_turn(self):
        R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.allclose(to_world([1, 0, 0], RigidPose3(R, np.zeros(3))), [0.0, 1.0, 0.0], atol=0)
        assert np.allclose(yaw_rotation(math.pi / 2), R, atol=1e-16)

    def test_pure_translation(self):
        assert np.array_equal(to_world([0, 0, 0], RigidPose3(np.eye(3), [2, 3, 4])), [2.0, 3.0, 4.0])

    @given(st.integers(0, 2**32 - 1))
    def test_rigidity(self, seed):
        rng = np.random.default_rng(seed)
        P = random_pose(rng)
        a, b = rng.uniform(-10, 10, (2, 3))
        lhs = np.linalg.norm(to_world(a, P) - to_world(b, P))
        assert abs(lhs - np.linalg.norm(a - b)) <= 1e-9


class TestDepthToCloud:
    def test_all_invalid(self):
        K = CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 4, 4)
        assert len(depth_to_cloud(np.zeros((4, 4)), K, RigidPose3.identity())) == 0

    def test_two_by_two(self):
        K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 2, 2)
        cloud = depth_to_cloud(np.ones((2, 2)), K, RigidPose3.identity())
        expect = [unproject(u, v, 1.0, K) for v in range(2) for u in range(2)]
        assert np.array_equal(cloud.points, expect)
        assert cloud.source.tolist() == [[0, 0], [1, 0], [0, 1], [1, 1]]

    def test_per_pixel_oracle_with_stride_and_holes(self, rng):
        K = random_intrinsics(rng, 9, 7)
        P = random_pose(rng)
        D = rng.uniform(0.5, 4, (7, 9))
        D[rng.random((7, 9)) < 0.3] = 0
        cloud = depth_to_cloud(D, K, P, stride=2)
        expect = [
            to_world(unproject(u, v, D[v, u], K), P)
            for v in range(0, 7, 2) for u in range(0, 9, 2) if D[v, u] > 0
        ]
        assert np.allclose(cloud.points, np.array(expect).reshape(-1, 3), atol=1e-12)

    def test_plane_depth(self, rng):
        K = random_intrinsics(rng, 16, 12)
        cloud = depth_to_cloud(np.full((12, 16), 3.25), K, RigidPose3.identity())
        assert np.all(cloud.points[:, 2] == 3.25)

    def test_rejects_negative_depth(self):
        K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 2, 2)
        with pytest.raises(InvalidDepthError):
            depth_to_cloud(np.array([[1.0, -1.0], [1.0, 1.0]]), K, RigidPose3.identity())

    def test_empty_cloud_helper(self):
        assert len(PointCloud.empty()) == 0


class TestFrustum:
    def test_corners_identity(self):
        K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 1, 1)
        f = frustum_of(K, RigidPose3.identity(), 1.0, 2.0)
        rect = [(0, 0), (1, 0), (1, 1), (0, 1)]
        # corners sit on the image rectangle boundary, so evaluate K^-1 directly
        expect = [_oracle_unproject(u, v, d, K) for d in (1.0, 2.0) for u, v in rect]
        assert np.allclose(f.corners, expect, atol=1e-15)

    def test_translation_equivariance(self, rng):
        K = random_intrinsics(rng)
        T = rng.uniform(-3, 3, 3)
        a = frustum_of(K, RigidPose3.identity(), 0.5, 3.0)
        b = frustum_of(K, RigidPose3(np.eye(3), T), 0.5, 3.0)
        assert np.allclose(b.corners, a.corners + T, atol=1e-12)

    def test_axis_midpoint_inside(self, rng):
        K = random_intrinsics(rng)
        P = random_pose(rng)
        f = frustum_of(K, P, 1.0, 4.0)
        # the principal ray of a camera with cx, cy inside the image
        assert f.contains(to_world([0.0, 0.0, 2.5], P))

    @pytest.mark.parametrize("lo,hi", [(2.0, 2.0), (3.0, 1.0), (0.0, 1.0)])
    def test_invalid_range(self, lo, hi):
        with pytest.raises(InvalidRangeError):
            frustum_of(UNIT, RigidPose3.identity(), lo, hi)

    def test_membership_matches_projection(self):
        rng = np.random.default_rng(7)
        K = random_intrinsics(rng, 40, 30)
        P = random_pose(rng)
        f = frustum_of(K, P, 0.8, 5.0)
        # sample around the frustum in pixel/depth space, then lift to world points
        n = 10_000
        u = rng.uniform(-10, K.width + 10, n)
        v = rng.uniform(-10, K.height + 10, n)
        z = rng.uniform(0.1, 7.0, n)
        cam = unproject_many(np.column_stack([u, v]), z, K)
        got = f.contains(to_world(cam, P))
        expect = (z >= 0.8) & (z <= 5.0) & (u >= 0) & (u <= K.width) & (v >= 0) & (v <= K.height)
        # exclude points within rounding distance of a face
        margin = np.minimum.reduce([np.abs(z - 0.8), np.abs(z - 5.0), np.abs(u), np.abs(u - K.width),
                                    np.abs(v), np.abs(v - K.height)])
        clear = margin > 1e-9
        assert np.array_equal(got[clear], expect[clear])
        assert 1000 < got.sum() < n - 1000

    def test_aabb_bounds_corners(self, rng):
        f = frustum_of(random_intrinsics(rng), random_pose(rng), 0.3, 2.0)
        lo, hi = f.aabb()
        assert np.all(f.corners >= lo) and np.all(f.corners <= hi)


def test_planar_camera_looks_along_heading():
    P = camera_pose_from_planar(1.0, 2.0, math.pi / 2, 1.2)
    ahead = to_world([0.0, 0.0, 1.0], P)
    assert np.allclose(ahead, [1.0, 3.0, 1.2], atol=1e-12)
    down = to_world([0.0, 1.0, 0.0], P)  # image +v points to world -z
    assert np.allclose(down, [1.0, 2.0, 0.2], atol=1e-12)
