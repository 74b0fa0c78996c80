"""Recover 3D end-effector positions from per-view heatmaps.

The workspace is discretized into a lattice of candidate points; a
candidate's score is the mean of bilinear heatmap samples at its projection
into every view, and the best-scoring lattice point wins. The production
search is coarse-to-fine: a stride-8 pass over max-pooled heatmaps (an upper
bound on any score inside a coarse cell, so the true basin cannot be pruned
by truncation gaps), then an exhaustive full-resolution pass in a +-2
coarse-cell cube. ``backproject_exhaustive`` keeps the brute-force semantics
available as the reference the fast path is validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .geometry import WorkspaceBox
from .heatmap import Heatmap


@dataclass(frozen=True)
class WorkspaceGrid:
    """Candidate lattice covering the workspace box.

    The default resolution should match the cameras' meters_per_pixel;
    finer grids cannot add information beyond heatmap resolution.
    """

    box: WorkspaceBox
    resolution: float

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    def axis_coords(self) -> list:
        """Per-axis lattice coordinates, lexicographic index order (x, y, z)."""
        n = int(math.floor(self.box.edge_length / self.resolution)) + 1
        lo = self.box.lo
        return [lo[a] + np.arange(n) * self.resolution for a in range(3)]


def _stack_grid(axes_xyz) -> np.ndarray:
    xs, ys, zs = axes_xyz
    grid = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3)


def _bilinear_sample(values: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample at fractional pixels; anything out of bounds reads 0."""
    h, w = values.shape
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0
    out = np.zeros(u.shape, dtype=np.float64)
    for du, dv, wgt in (
        (0, 0, (1 - fu) * (1 - fv)),
        (1, 0, fu * (1 - fv)),
        (0, 1, (1 - fu) * fv),
        (1, 1, fu * fv),
    ):
        uu = u0 + du
        vv = v0 + dv
        valid = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
        if np.any(valid):
            out[valid] += wgt[valid] * values[vv[valid], uu[valid]]
    return out


def score_points(points, heatmaps, cameras) -> np.ndarray:
    """Mean bilinear heatmap sample over all views, per candidate point."""
    if len(heatmaps) != len(cameras):
        raise ValueError("need one camera per heatmap")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    total = np.zeros(len(pts), dtype=np.float64)
    for hm, cam in zip(heatmaps, cameras):
        u, v, _ = cam.project(pts)
        total += _bilinear_sample(hm.values, u, v)
    return total / len(cameras)


def score_point(point, heatmaps, cameras) -> float:
    return float(score_points(np.asarray(point).reshape(1, 3), heatmaps, cameras)[0])


def _all_zero(heatmaps) -> bool:
    return all(np.max(hm.values) <= 0.0 for hm in heatmaps)


def backproject_exhaustive(heatmaps, cameras, grid: WorkspaceGrid):
    """Full-lattice argmax; ties go to the lexicographically smallest index."""
    if _all_zero(heatmaps):
        return None
    pts = _stack_grid(grid.axis_coords())
    scores = score_points(pts, heatmaps, cameras)
    best = int(np.argmax(scores))  # first occurrence == lexicographic smallest
    if scores[best] <= 0.0:
        return None
    return pts[best]


def backproject(
    heatmaps,
    cameras,
    grid: WorkspaceGrid,
    coarse_factor: int = 8,
    refine_cells: int = 2,
):
    """Coarse-to-fine lattice argmax; None when no view carries any peak.

    Matches :func:`backproject_exhaustive` on single-blob heatmaps: the
    coarse pass scores nearest-pixel samples of max-pooled heatmaps, an
    upper bound on every true score within the coarse cell, so the winning
    basin is always refined.
    """
    if _all_zero(heatmaps):
        return None
    axes = grid.axis_coords()
    stride = coarse_factor * grid.resolution
    coarse_axes = [ax[::coarse_factor] for ax in axes]
    coarse_pts = _stack_grid(coarse_axes)

    coarse_score = np.zeros(len(coarse_pts), dtype=np.float64)
    for hm, cam in zip(heatmaps, cameras):
        half_w = int(math.ceil(stride / (2.0 * cam.meters_per_pixel))) + 2
        pooled = maximum_filter(hm.values, size=2 * half_w + 1, mode="constant", cval=0.0)
        u, v, _ = cam.project(coarse_pts)
        ui = np.clip(np.rint(u).astype(np.int64), 0, pooled.shape[1] - 1)
        vi = np.clip(np.rint(v).astype(np.int64), 0, pooled.shape[0] - 1)
        coarse_score += pooled[vi, ui]
    center = coarse_pts[int(np.argmax(coarse_score))]

    window_axes = []
    for a in range(3):
        lo = center[a] - refine_cells * stride - 0.5 * grid.resolution
        hi = center[a] + refine_cells * stride + 0.5 * grid.resolution
        sel = axes[a][(axes[a] >= lo) & (axes[a] <= hi)]
        window_axes.append(sel)
    window_pts = _stack_grid(window_axes)
    scores = score_points(window_pts, heatmaps, cameras)
    best = int(np.argmax(scores))
    if scores[best] <= 0.0:
        return None
    return window_pts[best]


def trajectory_from_heatmap_video(hm_video, cameras, grid: WorkspaceGrid, initial_position):
    """Back-project every timestep of a T x V heatmap video.

    Timesteps with no recoverable peak hold the previous position; the first
    falls back to the caller's conditioning pose position. Returns
    ``(positions (T, 3), held (T,) bool)`` where ``held`` flags the fallback.
    """
    positions = []
    held = []
    previous = np.asarray(initial_position, dtype=np.float64).reshape(3)
    for frame_maps in hm_video:
        point = backproject(frame_maps, cameras, grid)
        if point is None:
            positions.append(previous.copy())
            held.append(True)
        else:
            previous = np.asarray(point, dtype=np.float64)
            positions.append(previous.copy())
            held.append(False)
    return np.asarray(positions), np.asarray(held, dtype=bool)
