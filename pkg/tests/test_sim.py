"""Procedural floorplans, clutter, trajectories and synthetic RGB-D frames."""

import math
from collections import deque
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geofloc.errors import InfeasibleSpecError, PlacementFailedError
from geofloc.floorplan import FREE, OCCUPIED, Pose2, raycast, render_scan
from geofloc.geom import camera_pose_from_planar, depth_to_cloud
from geofloc.mining import find_correspondences
from geofloc.sim import (
    CEILING_HEIGHT,
    FORWARD,
    GENERAL,
    ScenarioSpec,
    add_clutter,
    camera_intrinsics,
    frames_for_poses,
    gen_floorplan,
    gen_rgbd_sequence,
    gen_scenario,
    gen_trajectory,
    is_self_symmetric,
    render_depth,
    surface_cloud,
)

from test_mining import brute_pixel_pairs


def flood_components(cells):
    """Breadth-first 4-connected labelling of Free cells."""
    seen = np.zeros(cells.shape, bool)
    n = 0
    for start in zip(*np.nonzero(cells == FREE)):
        if seen[start]:
            continue
        n += 1
        q = deque([start])
        seen[start] = True
        while q:
            r, c = q.popleft()
            for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
                if 0 <= nr < cells.shape[0] and 0 <= nc < cells.shape[1]:
                    if cells[nr, nc] == FREE and not seen[nr, nc]:
                        seen[nr, nc] = True
                        q.append((nr, nc))
    return n


class TestFloorplan:
    def test_single_room(self):
        g = gen_floorplan(ScenarioSpec(rooms=1, width=20, height=15))
        expect = np.full((15, 20), OCCUPIED, np.uint8)
        expect[1:-1, 1:-1] = FREE
        assert np.array_equal(g.cells, expect)

    def test_deterministic(self):
        a, b = gen_floorplan(ScenarioSpec(seed=3)), gen_floorplan(ScenarioSpec(seed=3))
        assert a.cells.tobytes() == b.cells.tobytes()
        assert a.cells.tobytes() != gen_floorplan(ScenarioSpec(seed=4)).cells.tobytes()

    def test_four_rooms_seed_7_connected(self):
        g = gen_floorplan(ScenarioSpec(seed=7, rooms=4))
        assert flood_components(g.cells) == 1
        assert (g.cells == OCCUPIED).sum() > 2 * (64 + 62)  # interior walls exist

    @settings(max_examples=20)
    @given(st.integers(0, 10_000))
    def test_connected_and_asymmetric(self, seed):
        g = gen_floorplan(ScenarioSpec(seed=seed))
        assert flood_components(g.cells) == 1
        c = g.cells
        for t in (np.flipud(c), np.fliplr(c), np.rot90(c, 1), np.rot90(c, 2), np.rot90(c, 3), c.T,
                  np.rot90(c, 2).T):
            assert not np.array_equal(t, c)
        assert not is_self_symmetric(c)

    def test_infeasible(self):
        with pytest.raises(InfeasibleSpecError):
            gen_floorplan(ScenarioSpec(width=10, height=10, rooms=6, room_min=2.0))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ScenarioSpec(steps=0)
        with pytest.raises(ValueError):
            ScenarioSpec(room_min=5.0, room_max=2.0)
        with pytest.raises(ValueError):
            ScenarioSpec(profile="sideways")


class TestClutter:
    def test_zero_is_identity(self):
        g = gen_floorplan(ScenarioSpec())
        assert np.array_equal(add_clutter(g, ScenarioSpec()).cells, g.cells)

    def test_one_rectangle(self):
        spec = ScenarioSpec(rooms=1, clutter_count=1)
        g = gen_floorplan(spec)
        new = (add_clutter(g, spec).cells == OCCUPIED) & (g.cells == FREE)
        rows, cols = np.nonzero(new)
        assert len(rows) > 0
        # the new cells fill their bounding box exactly
        assert len(rows) == (np.ptp(rows) + 1) * (np.ptp(cols) + 1)

    def test_original_untouched_and_monotone(self):
        spec = ScenarioSpec(seed=5, clutter_count=5)
        g = gen_floorplan(spec)
        before = g.cells.tobytes()
        cl = add_clutter(g, spec)
        assert g.cells.tobytes() == before
        assert flood_components(cl.cells) == 1
        assert np.all(cl.cells[g.cells != FREE] == g.cells[g.cells != FREE])
        rng = np.random.default_rng(0)
        free = np.argwhere(cl.cells == FREE)
        for row, col in free[rng.choice(len(free), 50, replace=False)]:
            x, y = cl.cell_center(row, col)
            for a in rng.uniform(-math.pi, math.pi, 6):
                assert raycast(cl, (x, y), a) <= raycast(g, (x, y), a)

    def test_placement_failure(self):
        spec = ScenarioSpec(rooms=1, width=6, height=6, clutter_count=30, clutter_min=0.3, clutter_max=0.3)
        with pytest.raises(PlacementFailedError):
            add_clutter(gen_floorplan(spec), spec)


class TestTrajectory:
    def test_single_step(self):
        sc = gen_scenario(ScenarioSpec(steps=1))
        assert len(sc.trajectory) == 1 and sc.trajectory.deltas == [(0.0, 0.0, 0.0)]

    def test_forward_only_always_translates(self):
        sc = gen_scenario(ScenarioSpec(seed=2, profile=FORWARD))
        for dx, dy, _ in sc.trajectory.deltas[1:]:
            assert math.hypot(dx, dy) > 0.1

    def test_general_has_turns(self):
        sc = gen_scenario(ScenarioSpec(seed=2, profile=GENERAL))
        turns = [d for d in sc.trajectory.deltas[1:] if d[0] == 0 and d[1] == 0]
        assert 0 < len(turns) < len(sc.trajectory.deltas) - 1

    @settings(max_examples=15)
    @given(st.integers(0, 10_000), st.sampled_from([FORWARD, GENERAL]), st.integers(0, 4))
    def test_composition_and_free_space(self, seed, profile, clutter):
        spec = ScenarioSpec(seed=seed, profile=profile, clutter_count=clutter)
        sc = gen_scenario(spec, observe=False)
        traj = sc.trajectory
        for p, q in zip(traj.poses, traj.composed_poses()):
            assert abs(p.x - q.x) <= 1e-9 and abs(p.y - q.y) <= 1e-9
            assert abs(math.remainder(p.phi - q.phi, 2 * math.pi)) <= 1e-9
        for p in traj.poses:
            row, col = sc.grid.world_to_cell(p.x, p.y)
            assert sc.grid.cells[row, col] == FREE and sc.cluttered.cells[row, col] == FREE

    def test_observations_from_cluttered_twin(self):
        spec = ScenarioSpec(seed=4, clutter_count=5, steps=10)
        sc = gen_scenario(spec)
        for p, obs in zip(sc.trajectory.poses, sc.trajectory.observations):
            ref = render_scan(sc.cluttered, p, spec.n_rays, spec.fov, spec.max_range)
            assert np.array_equal(obs.depths, ref.depths)

    def test_deterministic(self):
        spec = ScenarioSpec(seed=8, sigma=0.1, dropout=0.1, clutter_count=2)
        a, b = gen_scenario(spec), gen_scenario(spec)
        assert a.trajectory.poses == b.trajectory.poses
        assert all(x.depths.tobytes() == y.depths.tobytes()
                   for x, y in zip(a.trajectory.observations, b.trajectory.observations))

    def test_same_path_with_and_without_observations(self):
        spec = ScenarioSpec(seed=9)
        sc = gen_scenario(spec)
        assert gen_trajectory(sc.grid, sc.cluttered, spec, observe=False).poses == sc.trajectory.poses


def on_surface(grid, p, tol=1e-6):
    """True when ``p`` lies on the floor, the ceiling, or a face between Free and blocked cells."""
    x, y, z = p
    if abs(z) <= tol or abs(z - CEILING_HEIGHT) <= tol:
        return True
    blocked = grid.cells != FREE
    res = grid.resolution
    for u, w, axis in ((x, y, 0), (y, x, 1)):
        k = round(u / res)
        if abs(u - k * res) <= tol:
            j = math.floor(w / res)
            a, b = (j, k - 1), (j, k)  # (row, col) on both sides of a vertical face
            if axis == 1:
                a, b = (k - 1, j), (k, j)
            cells = [c for c in (a, b) if grid.in_bounds(*c)]
            if any(blocked[c] for c in cells):
                return True
    return False


class TestRGBD:
    def test_fronto_parallel_wall(self):
        spec = ScenarioSpec(rooms=1, width=40, height=40)
        g = gen_floorplan(spec)
        K = camera_intrinsics(spec)
        # interior spans x in [0.1, 3.9]; stand 2 m from the east wall
        cam = camera_pose_from_planar(1.9, 2.0, 0.0, 1.2)
        D = render_depth(g, K, cam)
        assert abs(D[int(K.cy), int(K.cx)] - 2.0) <= 1e-12

    def test_points_on_extruded_surfaces(self):
        spec = ScenarioSpec(seed=11, steps=6)
        seq = gen_rgbd_sequence(spec)
        for D, P in seq.frames:
            cloud = depth_to_cloud(D, seq.intrinsics, P)
            assert len(cloud) == D.size
            for p in cloud.points:
                assert on_surface(seq.grid, p)

    def test_surface_cloud_on_surfaces(self):
        g = gen_floorplan(ScenarioSpec(rooms=1, width=8, height=6))
        S = surface_cloud(g)
        assert all(on_surface(g, p) for p in S.points)
        # perimeter wall area sampled at 2 cm spacing plus floor and ceiling
        per_face = 5 * 125
        assert len(S) == 2 * (6 + 4) * per_face + 2 * 24 * 25

    def test_identical_poses_ratio_one(self):
        spec = ScenarioSpec(seed=1, image_width=16, image_height=12)
        g = gen_floorplan(spec)
        p = Pose2(*g.cell_center(10, 10), 0.4)
        (Da, Pa), (Db, Pb) = frames_for_poses(g, spec, [p, p])
        c = find_correspondences(Da, Db, camera_intrinsics(spec), Pa, Pb, 0.02, 1)
        assert c.ratio == 1.0

    def test_corner_quarter_turn_matches_brute_force(self):
        spec = ScenarioSpec(rooms=1, width=30, height=30, image_width=16, image_height=12)
        g = gen_floorplan(spec)
        K = camera_intrinsics(spec)
        p = Pose2(*g.cell_center(5, 5), math.radians(30))
        frames = frames_for_poses(g, spec, [p, replace(p, phi=p.phi + math.pi / 2)])
        (Da, Pa), (Db, Pb) = frames
        c = find_correspondences(Da, Db, K, Pa, Pb, 0.02, 1)
        brute = brute_pixel_pairs(Da, Db, K, Pa, Pb, 0.02)
        assert c.as_set() == brute
        valid_a, valid_b = int((Da > 0).sum()), int((Db > 0).sum())
        assert c.ratio == 2 * len(brute) / (valid_a + valid_b)
