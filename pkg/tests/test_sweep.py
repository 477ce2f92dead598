import numpy as np
import pytest

from pathmaps.core.scene import (
    MULTIPATH_PARAMS,
    SPEED_OF_LIGHT,
    Box,
    PathKind,
    ScenarioKind,
    SceneSpec,
    SynthConfig,
    Trajectory,
    TrajectoryError,
    UavPose,
    UnknownParamError,
    build_scene,
    condition_matrix,
    ground_cell_centers,
    rasterize_maps,
    sweep_conditions,
    sweep_trajectory,
    synthesize_snapshots,
    trace_links,
)
from pathmaps.core.scene.maps import max_delay_s
from pathmaps.storage import StorageError, read_manifest, read_raster

SMALL = SynthConfig(image_size=16, map_size=8, max_paths=2)


class TestTrajectory:

    def test_step_count(self):
        assert Trajectory((0.0, 0.0), (0.0, -10.0), 0.5).steps() == 21

    def test_positions_follow_velocity(self):
        positions = Trajectory((0.0, 0.0), (0.0, -10.0), 0.5).positions()
        assert positions[0] == (0.0, 0.0)
        assert positions[-1] == pytest.approx((0.0, -10.0))
        assert positions[1] == pytest.approx((0.0, -0.5))

    def test_zero_velocity(self):
        with pytest.raises(TrajectoryError):
            Trajectory((0.0, 0.0), (0.0, -10.0), 0.0).steps()


class TestConditionMatrix:

    def test_twelve_conditions(self):
        cross = condition_matrix("crossroad")
        wide = condition_matrix(ScenarioKind.WIDE_LANE)
        assert len(cross) == len(wide) == 6
        assert len({c.tag for c in cross + wide}) == 12
        assert {c.altitude_m for c in cross} == {50.0, 70.0, 80.0}
        assert {c.frequency_hz for c in wide if c.altitude_m == 250.0} == {1.6e9, 5.9e9, 15e9, 28e9}
        assert cross[0].tag == "crossroad-28GHz-50m"


class TestRasterizeMaps:

    def traced(self):
        scene = build_scene(0, "crossroad")
        pose = UavPose(0, 0, 70)
        grid = ground_cell_centers(pose, 16, 16)
        return scene, pose, grid, trace_links(scene, pose, grid, 28e9, 6)

    def test_unknown_param(self):
        with pytest.raises(UnknownParamError) as info:
            rasterize_maps([[[]]], 1, ["power", "phase"], 28e9, UavPose(0, 0, 50))
        assert info.value.code == "unknown-param"

    def test_all_invalid(self):
        maps = rasterize_maps([[[], []], [[], []]], 1, MULTIPATH_PARAMS, 28e9, UavPose(0, 0, 50))
        assert not maps.valid_mask.any()
        assert all(np.all(m == 0.0) for m in maps.maps.values())

    def test_values_in_unit_range_and_invalid_zero(self):
        _, pose, _, paths = self.traced()
        for k in (1, 2, 3):
            maps = rasterize_maps(paths, k, MULTIPATH_PARAMS, 28e9, pose)
            for raster in maps.maps.values():
                assert np.all((raster >= 0.0) & (raster <= 1.0))
                assert np.all(raster[~maps.valid_mask] == 0.0)

    def test_delay_denormalizes_to_geometric_length(self):
        _, pose, grid, paths = self.traced()
        maps = rasterize_maps(paths, 1, ["delay", "aod_el"], 28e9, pose)
        delay = maps.physical("delay")
        assert maps.valid_mask.any()
        tx = pose.position
        for i, j in zip(*np.nonzero(maps.valid_mask)):
            rec = paths[i][j][0]
            if rec.kind is PathKind.LOS:
                length = np.linalg.norm(grid[i, j] - tx)
            else:
                b = np.array(rec.bounce_point)
                length = np.linalg.norm(b - tx) + np.linalg.norm(grid[i, j] - b)
            assert delay[i, j] == pytest.approx(length / SPEED_OF_LIGHT, rel=1e-9)
            assert maps.physical("aod_el")[i, j] == pytest.approx(rec.aod_el_deg, abs=1e-6)

    def test_selects_requested_path_index(self):
        _, pose, _, paths = self.traced()
        second = rasterize_maps(paths, 2, ["power"], 28e9, pose)
        expected = np.array([[len(cell) >= 2 for cell in row] for row in paths])
        assert np.array_equal(second.valid_mask, expected)

    def test_delay_range_covers_footprint(self):
        pose = UavPose(0, 0, 70)
        assert max_delay_s(pose) > 70.0 / SPEED_OF_LIGHT

    def test_long_reflection_delay_round_trips(self):
        tower = Box(cx=190.0, cy=0.0, w=10.0, l=40.0, height=200.0)
        scene = SceneSpec(seed=0, scenario_kind=ScenarioKind.CROSSROAD, buildings=(tower,))
        pose = UavPose(0, 0, 70)
        grid = np.array([[[30.0, 0.0, 0.0]]])
        paths = trace_links(scene, pose, grid, 28e9, 6)
        reflection = paths[0][0][1]
        assert reflection.kind is PathKind.REFLECTION
        assert reflection.delay_s > max_delay_s(pose)
        for k in (1, 2):
            maps = rasterize_maps(paths, k, ["delay"], 28e9, pose)
            assert maps.normalization["delay"] == (0.0, reflection.delay_s)
        assert maps.maps["delay"][0, 0] == pytest.approx(1.0)
        assert maps.physical("delay")[0, 0] == pytest.approx(reflection.delay_s, rel=1e-9)

    def test_nominal_delay_span_for_line_of_sight(self):
        pose = UavPose(0, 0, 70)
        scene = SceneSpec(seed=0, scenario_kind=ScenarioKind.CROSSROAD)
        paths = trace_links(scene, pose, ground_cell_centers(pose, 8, 8), 28e9, 6)
        maps = rasterize_maps(paths, 1, ["delay"], 28e9, pose)
        assert maps.normalization["delay"] == (0.0, max_delay_s(pose))


class TestSweep:

    def test_snapshot_per_frequency_shares_geometry(self):
        scene = build_scene(0, "crossroad")
        snaps = synthesize_snapshots(scene, UavPose(0, 0, 70), [1.6e9, 28e9], SMALL)
        assert len(snaps) == 2
        assert snaps[0].image is snaps[1].image
        assert np.array_equal(snaps[0].map_sets[0].valid_mask, snaps[1].map_sets[0].valid_mask)
        assert np.array_equal(snaps[0].map_sets[0].maps["delay"], snaps[1].map_sets[0].maps["delay"])

    def test_manifest_counts_and_files(self, tmp_path):
        scene = build_scene(0, "crossroad")
        trajectory = Trajectory((0.0, 0.0), (0.0, -1.0), 0.5)
        manifest = sweep_trajectory(scene, trajectory, [50.0, 70.0], [1.6e9, 28e9], tmp_path, SMALL)
        assert len(manifest) == 3 * 2 * 2
        back = read_manifest(tmp_path)
        assert back.to_dict() == manifest.to_dict()
        entry = back.snapshots[0]
        assert read_raster(back.resolve(entry.image_path)).shape == (16, 16, 3)
        assert read_raster(back.resolve(entry.map_paths["power"])).shape == (8, 8, 1)
        assert set(entry.map_paths) == set(MULTIPATH_PARAMS)
        for s in back.snapshots:
            assert s.delay_span_s >= max_delay_s(UavPose(0, 0, s.altitude_m, SMALL.fov_deg))
        steps = {}
        for s in back.snapshots:
            steps.setdefault(s.step, set()).add(s.altitude_m)
        assert all(alts == {50.0, 70.0} for alts in steps.values())

    def test_rerun_is_byte_identical(self, tmp_path):
        scene = build_scene(2, "crossroad")
        trajectory = Trajectory((0.0, 0.0), (1.0, 0.0), 1.0)
        a = sweep_trajectory(scene, trajectory, [70.0], [28e9], tmp_path / "a", SMALL)
        sweep_trajectory(scene, trajectory, [70.0], [28e9], tmp_path / "b", SMALL, workers=2)
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
        for entry in a.snapshots:
            for rel in [entry.image_path, entry.mask_path, *entry.map_paths.values()]:
                assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_top_n_paths(self, tmp_path):
        scene = build_scene(0, "crossroad")
        cfg = SynthConfig(image_size=16, map_size=8, max_paths=3, n_paths=3)
        manifest = sweep_trajectory(scene, Trajectory((0.0, 0.0), (0.0, 0.0), 1.0), [70.0], [28e9], tmp_path, cfg)
        assert sorted(s.path_index for s in manifest.snapshots) == [1, 2, 3]

    def test_condition_sweep_tags(self, tmp_path):
        scene = build_scene(0, "crossroad")
        manifest = sweep_conditions(scene, Trajectory((0.0, 0.0), (0.0, 0.0), 1.0),
                                    condition_matrix("crossroad"), tmp_path, SMALL)
        assert manifest.datasets() == sorted(c.tag for c in condition_matrix("crossroad"))

    def test_embeddings_written_when_requested(self, tmp_path):
        scene = build_scene(0, "crossroad")
        manifest = sweep_trajectory(scene, Trajectory((0.0, 0.0), (0.0, 0.0), 1.0), [70.0], [28e9], tmp_path,
                                    SMALL, embedder=lambda image: np.full((4, 2), image.mean()))
        entry = manifest.snapshots[0]
        assert read_raster(manifest.resolve(entry.embedding_path)).shape == (4, 2, 1)

    def test_endpoint_outside_scene(self, tmp_path):
        with pytest.raises(TrajectoryError):
            sweep_trajectory(build_scene(0, "crossroad"), Trajectory((0.0, 0.0), (0.0, 900.0), 1.0),
                             [70.0], [28e9], tmp_path, SMALL)

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        scene = SceneSpec(seed=0, scenario_kind="crossroad")
        with pytest.raises(StorageError):
            sweep_trajectory(scene, Trajectory((0.0, 0.0), (0.0, 0.0), 1.0), [70.0], [28e9], blocker / "out", SMALL)
