import numpy as np
import pytest

from mvpolicy.backprojection import (
    WorkspaceGrid,
    backproject,
    backproject_exhaustive,
    score_point,
    score_points,
    trajectory_from_heatmap_video,
)
from mvpolicy.geometry import WorkspaceBox, default_camera_rig
from mvpolicy.heatmap import Heatmap, HeatmapParams, render_heatmap

PARAMS = HeatmapParams(sigma=1.5, tau=0.01, reference_size=256)


def bilinear_oracle(values, u, v):
    """Independent bilinear sample with zero outside."""
    h, w = values.shape
    u0, v0 = int(np.floor(u)), int(np.floor(v))
    fu, fv = u - u0, v - v0
    total = 0.0
    for du, dv, wgt in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)), (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
        uu, vv = u0 + du, v0 + dv
        if 0 <= uu < w and 0 <= vv < h:
            total += wgt * values[vv, uu]
    return total


def render_all(cams, p, params=PARAMS):
    return [render_heatmap(c, p, params) for c in cams]


def lattice_points(box, res, rng, n):
    """Random grid lattice points strictly inside the box."""
    m = int(np.floor(box.edge_length / res))
    idx = rng.integers(2, m - 2, size=(n, 3))
    return box.lo[None, :] + idx * res


class TestScorePoint:
    def test_peak_scores_one_on_lattice(self, unit_box, rig256):
        rng = np.random.default_rng(0)
        res = rig256[0].meters_per_pixel
        for p in lattice_points(unit_box, res, rng, 10):
            hms = render_all(rig256, p)
            assert score_point(p, hms, rig256) == pytest.approx(1.0, abs=1e-3)

    def test_outside_truncation_zero(self, unit_box, rig256):
        p = np.array([0.1, 0.1, 0.1])
        hms = render_all(rig256, p)
        far = p + np.array([0.1, -0.1, 0.1])  # far beyond the ~18 mm truncation
        assert score_point(far, hms, rig256) == 0.0

    def test_matches_hand_computed_mean(self, unit_box, rig256):
        rng = np.random.default_rng(1)
        p = rng.uniform(-0.3, 0.3, 3)
        hms = render_all(rig256, p)
        q = p + rng.uniform(-0.005, 0.005, 3)
        expected = 0.0
        for hm, cam in zip(hms, rig256):
            u, v, _ = cam.project(q.reshape(1, 3))
            expected += bilinear_oracle(hm.values, u[0], v[0])
        expected /= len(rig256)
        assert score_point(q, hms, rig256) == pytest.approx(expected, abs=1e-12)

    def test_permutation_invariant(self, unit_box, rig256):
        rng = np.random.default_rng(2)
        p = rng.uniform(-0.3, 0.3, 3)
        hms = render_all(rig256, p)
        q = p + np.array([0.002, -0.001, 0.003])
        base = score_point(q, hms, rig256)
        perm = [2, 0, 1]
        assert score_point(q, [hms[i] for i in perm], [rig256[i] for i in perm]) == pytest.approx(base)


class TestBackproject:
    def test_round_trip_within_two_cells(self, unit_box, rig256):
        rng = np.random.default_rng(3)
        grid = WorkspaceGrid(unit_box, rig256[0].meters_per_pixel)
        for _ in range(20):
            p = rng.uniform(-0.4, 0.4, 3)
            rec = backproject(render_all(rig256, p), rig256, grid)
            assert np.linalg.norm(rec - p) <= 0.008

    def test_single_view_consistent_with_that_view(self, unit_box, rig256):
        cam = rig256[0]
        p = np.array([0.07, -0.12, 0.2])
        hm = render_heatmap(cam, p, PARAMS)
        grid = WorkspaceGrid(unit_box, cam.meters_per_pixel)
        rec = backproject([hm], [cam], grid)
        u, v, _ = cam.project(rec.reshape(1, 3))
        uh, vh, _ = cam.project(p.reshape(1, 3))
        # recovered point sits on the view ray of the peak (depth unconstrained)
        assert abs(u[0] - uh[0]) <= 1.0 and abs(v[0] - vh[0]) <= 1.0

    def test_coarse_to_fine_equals_exhaustive_64(self, unit_box, rig256):
        rng = np.random.default_rng(4)
        grid = WorkspaceGrid(unit_box, 1.0 / 64)
        for _ in range(10):
            p = rng.uniform(-0.42, 0.42, 3)
            hms = render_all(rig256, p)
            fast = backproject(hms, rig256, grid)
            exact = backproject_exhaustive(hms, rig256, grid)
            assert np.array_equal(fast, exact)

    def test_all_zero_no_peak(self, unit_box, rig256):
        zeros = [Heatmap(np.zeros(c.image_size)) for c in rig256]
        grid = WorkspaceGrid(unit_box, 1.0 / 64)
        assert backproject(zeros, rig256, grid) is None
        assert backproject_exhaustive(zeros, rig256, grid) is None


class TestTrajectory:
    def test_straight_line_round_trip(self, unit_box, rig256):
        grid = WorkspaceGrid(unit_box, rig256[0].meters_per_pixel)
        start = np.array([-0.2, -0.1, 0.0])
        end = np.array([0.2, 0.15, 0.2])
        video = []
        truth = []
        for t in np.linspace(0, 1, 8):
            p = (1 - t) * start + t * end
            truth.append(p)
            video.append(render_all(rig256, p))
        positions, held = trajectory_from_heatmap_video(video, rig256, grid, initial_position=start)
        assert not np.any(held)
        assert np.max(np.linalg.norm(positions - np.asarray(truth), axis=1)) <= 0.008

    def test_all_zero_video_holds_initial(self, unit_box, rig256):
        grid = WorkspaceGrid(unit_box, 1.0 / 64)
        zeros = [Heatmap(np.zeros(c.image_size)) for c in rig256]
        p0 = np.array([0.05, 0.06, 0.07])
        positions, held = trajectory_from_heatmap_video([zeros] * 4, rig256, grid, initial_position=p0)
        assert np.all(held)
        assert np.allclose(positions, p0)

    def test_corrupted_frame_holds_predecessor(self, unit_box, rig256):
        grid = WorkspaceGrid(unit_box, rig256[0].meters_per_pixel)
        a, b = np.array([0.1, 0.0, 0.0]), np.array([0.15, 0.05, 0.05])
        zeros = [Heatmap(np.zeros(c.image_size)) for c in rig256]
        video = [render_all(rig256, a), zeros, render_all(rig256, b)]
        positions, held = trajectory_from_heatmap_video(video, rig256, grid, initial_position=a)
        assert held.tolist() == [False, True, False]
        assert np.array_equal(positions[1], positions[0])


def test_score_points_vectorized_matches_scalar(unit_box, rig256):
    rng = np.random.default_rng(5)
    p = rng.uniform(-0.3, 0.3, 3)
    hms = render_all(rig256, p)
    pts = p + rng.uniform(-0.01, 0.01, (20, 3))
    vec = score_points(pts, hms, rig256)
    for i, q in enumerate(pts):
        assert vec[i] == pytest.approx(score_point(q, hms, rig256))
