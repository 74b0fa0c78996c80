import numpy as np
import pytest
from PIL import Image

from mvpolicy.backprojection import WorkspaceGrid, backproject
from mvpolicy.data import (
    ClipRangeError,
    Episode,
    EpisodeTruncatedError,
    EpisodeVersionError,
    build_clip,
    export_frames_png,
    read_episode,
    render_overlay,
    write_episode,
)
from mvpolicy.geometry import AugmentParams, ColoredPointCloud, PoseEE, WorkspaceBox, default_camera_rig
from mvpolicy.heatmap import Heatmap, HeatmapParams, argpeak
from mvpolicy.sim import SimConfig, TaskSpec, generate_demos

BOX = WorkspaceBox((0.0, 0.0, 0.0), 0.48)
HEAT = HeatmapParams(sigma=1.5, reference_size=64)


def toy_episode(rig, n_frames=30, seed=0) -> Episode:
    rng = np.random.default_rng(seed)
    clouds, poses = [], []
    for k in range(n_frames):
        n = int(rng.integers(50, 120))
        pts = rng.uniform(-0.2, 0.2, (n, 3))
        cols = rng.integers(0, 256, (n, 3)) / 255.0
        clouds.append(ColoredPointCloud(pts.astype(np.float32).astype(np.float64), cols))
        poses.append(
            PoseEE(
                rng.uniform(-0.15, 0.15, 3).astype(np.float32).astype(np.float64),
                rng.uniform(-1, 1, 3).astype(np.float32).astype(np.float64),
                int(rng.integers(0, 2)),
            )
        )
    return Episode(
        task_id="pick_place",
        seed=seed,
        stride=2,
        cameras=rig,
        workspace=BOX,
        clouds=clouds,
        poses=poses,
        extra={"success_step": 1},
    )


class TestEpisodeRoundTrip:
    def test_structural_equality(self, tmp_path, rig64):
        ep = toy_episode(rig64)
        path = tmp_path / "e.mvep"
        write_episode(ep, path)
        back = read_episode(path)
        assert back.task_id == ep.task_id
        assert back.frame_count == ep.frame_count
        assert back.stride == ep.stride
        for c1, c2 in zip(ep.clouds, back.clouds):
            assert np.allclose(c1.positions, c2.positions, atol=1e-7)
            assert np.array_equal(np.round(c1.colors * 255), np.round(c2.colors * 255))
        for p1, p2 in zip(ep.poses, back.poses):
            assert np.allclose(p1.position, p2.position, atol=1e-7)
            assert p1.gripper == p2.gripper
        for cam1, cam2 in zip(ep.cameras, back.cameras):
            assert np.allclose(cam1.rotation, cam2.rotation)
            assert cam1.image_size == cam2.image_size

    def test_byte_exact_rewrite(self, tmp_path, rig64):
        path1 = tmp_path / "a.mvep"
        path2 = tmp_path / "b.mvep"
        write_episode(toy_episode(rig64), path1)
        write_episode(read_episode(path1), path2)
        assert path1.read_bytes() == path2.read_bytes()

    def test_truncation_names_frame(self, tmp_path, rig64):
        path = tmp_path / "t.mvep"
        write_episode(toy_episode(rig64, n_frames=8), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 40])
        with pytest.raises(EpisodeTruncatedError) as err:
            read_episode(path)
        assert err.value.frame_index == 7

    def test_version_mismatch_no_partial_read(self, tmp_path, rig64):
        path = tmp_path / "v.mvep"
        write_episode(toy_episode(rig64, n_frames=4), path)
        data = path.read_bytes().replace(b'"mvep-1"', b'"mvep-9"')
        path.write_bytes(data)
        with pytest.raises(EpisodeVersionError):
            read_episode(path)

    def test_trailing_bytes_rejected(self, tmp_path, rig64):
        path = tmp_path / "x.mvep"
        write_episode(toy_episode(rig64, n_frames=4), path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(Exception, match="mismatch"):
            read_episode(path)


@pytest.fixture(scope="module")
def demo_episode(tmp_path_factory, rig64):
    out = tmp_path_factory.mktemp("demo")
    cfg = SimConfig(box=BOX, n_points=6000)
    paths = generate_demos(TaskSpec("pick_place"), 1, 3, out, cfg, rig64, stride=2, tail_frames=24)
    return read_episode(paths[0])


class TestBuildClip:
    def test_no_augment_deterministic(self, demo_episode, rig64):
        a = build_clip(demo_episode, 2, rig64, HEAT, augment=None)
        b = build_clip(demo_episode, 2, rig64, HEAT, augment=None)
        assert np.array_equal(a.rgb, b.rgb)
        assert np.array_equal(a.heat, b.heat)
        assert np.array_equal(a.target_euler_bins, b.target_euler_bins)

    def test_augment_seed_deterministic(self, demo_episode, rig64):
        a = build_clip(demo_episode, 1, rig64, HEAT, augment=AugmentParams(), augment_seed=9)
        b = build_clip(demo_episode, 1, rig64, HEAT, augment=AugmentParams(), augment_seed=9)
        c = build_clip(demo_episode, 1, rig64, HEAT, augment=AugmentParams(), augment_seed=10)
        assert np.array_equal(a.rgb, b.rgb)
        assert not np.array_equal(a.rgb, c.rgb)

    def test_constant_euler_gives_center_bins(self, rig64):
        ep = toy_episode(rig64, n_frames=26)
        for pose in ep.poses:
            pose.euler = np.zeros(3)
        clip = build_clip(ep, 0, rig64, HEAT, augment=None)
        assert np.all(clip.target_euler_bins == 36)

    def test_too_short_episode_rejected(self, rig64):
        ep = toy_episode(rig64, n_frames=10)
        with pytest.raises(ClipRangeError):
            build_clip(ep, 0, rig64, HEAT, augment=None)

    def test_heatmap_peaks_backproject_to_positions(self, demo_episode, rig64):
        clip = build_clip(demo_episode, 0, rig64, HEAT, augment=None)
        grid = WorkspaceGrid(BOX, rig64[0].meters_per_pixel)
        for k in (0, 8, 20):
            maps = [Heatmap(clip.heat[v, 1 + k].astype(np.float64)) for v in range(3)]
            rec = backproject(maps, rig64, grid)
            assert np.linalg.norm(rec - clip.target_positions[k]) <= 0.008

    def test_gripper_targets_match_poses(self, demo_episode, rig64):
        clip = build_clip(demo_episode, 3, rig64, HEAT, augment=None)
        expect = [demo_episode.poses[3 + 1 + k].gripper for k in range(24)]
        assert clip.target_gripper.tolist() == expect


class TestExportFrames:
    def test_file_count_and_round_trip(self, tmp_path, demo_episode, rig64):
        clip = build_clip(demo_episode, 0, rig64, HEAT, augment=None)
        count = export_frames_png(clip.rgb, clip.heat, tmp_path)
        assert count == 3 * 25 * 3  # views x frames x streams
        img = np.asarray(Image.open(tmp_path / "rgb" / "1" / "7.png"), dtype=np.float64) / 255.0
        assert np.max(np.abs(img - clip.rgb[1, 7])) <= 0.5 / 255 + 1e-9

    def test_overlay_marks_argpeak(self, demo_episode, rig64):
        clip = build_clip(demo_episode, 0, rig64, HEAT, augment=None)
        u, v, _ = argpeak(Heatmap(clip.heat[0, 0].astype(np.float64)))
        overlay = render_overlay(clip.rgb[0, 0], clip.heat[0, 0])
        assert np.allclose(overlay[v, u], [1.0, 0.0, 1.0])
