"""Z-ordered point rasterization onto orthographic views.

Each point's depth and index are packed into one 64-bit integer (upper 32
bits: depth quantized over the camera's depth range, lower 32: point index)
so that the per-pixel nearest-point reduction is a plain minimum over
integers. Minimum is commutative and associative, so the render is
bit-identical for any point ordering, chunking, or thread count, with ties
resolved by point index.

Splatting widens each rendered point into a screen-space disc after the
Z-order pass; it reads only the pre-splat image, never its own output.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import ColoredPointCloud, OrthoCamera

DEPTH_STEPS = np.uint64(2**32 - 1)
INDEX_MASK = np.uint64(0xFFFFFFFF)
EMPTY_PACKED = np.uint64(0xFFFFFFFFFFFFFFFF)
EMPTY_INDEX = -1


class DepthRangeError(ValueError):
    """Depth falls outside the packing range."""


def _quantize_depth(depth, depth_range) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    lo, hi = float(depth_range[0]), float(depth_range[1])
    if np.any(d < lo) or np.any(d > hi):
        raise DepthRangeError(f"depth outside packing range [{lo}, {hi}]")
    scaled = (d - lo) / (hi - lo) * float(DEPTH_STEPS)
    return np.floor(scaled).astype(np.uint64)


def pack_depth_index(depth, index, depth_range):
    """Pack (depth, index) into uint64; monotone in depth, ties by index.

    Scalars in, scalar out; arrays are packed elementwise.
    """
    idx = np.asarray(index, dtype=np.uint64)
    if np.any(np.asarray(index) < 0) or np.any(idx > INDEX_MASK):
        raise ValueError("index must fit in 32 unsigned bits")
    packed = (_quantize_depth(depth, depth_range) << np.uint64(32)) | idx
    if np.ndim(depth) == 0 and np.ndim(index) == 0:
        return int(packed)
    return packed


def unpack_depth_index(packed, depth_range):
    """Recover (depth lower-edge, index) from a packed value."""
    p = np.asarray(packed, dtype=np.uint64)
    lo, hi = float(depth_range[0]), float(depth_range[1])
    q = (p >> np.uint64(32)).astype(np.float64)
    depth = lo + q / float(DEPTH_STEPS) * (hi - lo)
    index = (p & INDEX_MASK).astype(np.int64)
    if np.ndim(packed) == 0:
        return float(depth), int(index)
    return depth, index


def round_half_away(values) -> np.ndarray:
    """Symmetric round-half-away-from-zero, the pixel rounding rule."""
    v = np.asarray(values, dtype=np.float64)
    return np.where(v >= 0, np.floor(v + 0.5), np.ceil(v - 0.5))


@dataclass
class RenderedView:
    """One view's render: colors, metric depth, and winning point index.

    Empty pixels carry depth ``+inf`` and hit_index ``-1``; their rgb is the
    background color (black unless filled later).
    """

    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float64, +inf where empty
    hit_index: np.ndarray  # (H, W) int64, -1 where empty

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def empty_mask(self) -> np.ndarray:
        return ~np.isfinite(self.depth)


@dataclass
class MultiViewFrame:
    """Per-camera rendered views of one observation; all views share dims."""

    views: list
    timestep: int = 0


def _reduce_chunk(pixel_ids, packed, n_pixels) -> np.ndarray:
    buf = np.full(n_pixels, EMPTY_PACKED, dtype=np.uint64)
    np.minimum.at(buf, pixel_ids, packed)
    return buf


def zorder_render(cloud: ColoredPointCloud, cam: OrthoCamera, n_threads: int = 1) -> RenderedView:
    """Render the nearest point per pixel (ties to the smallest point index).

    The cloud must already be cropped to the workspace so every depth lies in
    the camera's packing range. ``n_threads`` only splits the reduction into
    per-thread buffers merged by elementwise minimum; the output is
    bit-identical for every thread count.
    """
    h, w = cam.image_size
    rgb = np.zeros((h, w, 3), dtype=np.float32)
    depth_img = np.full((h, w), np.inf, dtype=np.float64)
    hit = np.full((h, w), EMPTY_INDEX, dtype=np.int64)
    n = len(cloud)
    if n == 0:
        return RenderedView(rgb, depth_img, hit)
    if n > int(INDEX_MASK):
        raise ValueError("cloud exceeds 32-bit point indexing")

    u, v, d = cam.project(cloud.positions)
    ui = round_half_away(u)
    vi = round_half_away(v)
    inside = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    if not np.any(inside):
        return RenderedView(rgb, depth_img, hit)
    idx = np.nonzero(inside)[0]
    pixel_ids = (vi[idx].astype(np.int64) * w + ui[idx].astype(np.int64))
    packed = pack_depth_index(d[idx], idx, cam.depth_range)

    if n_threads <= 1 or len(idx) < 2 * n_threads:
        buf = _reduce_chunk(pixel_ids, packed, h * w)
    else:
        bounds = np.linspace(0, len(idx), n_threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            bufs = list(
                pool.map(
                    lambda se: _reduce_chunk(pixel_ids[se[0] : se[1]], packed[se[0] : se[1]], h * w),
                    zip(bounds[:-1], bounds[1:]),
                )
            )
        buf = np.minimum.reduce(bufs)

    filled = buf != EMPTY_PACKED
    winner = (buf[filled] & INDEX_MASK).astype(np.int64)
    flat_rgb = rgb.reshape(-1, 3)
    flat_rgb[filled] = cloud.colors[winner]
    depth_img.reshape(-1)[filled] = d[winner]
    hit.reshape(-1)[filled] = winner
    return RenderedView(rgb, depth_img, hit)


def splat(view: RenderedView, cam: OrthoCamera) -> RenderedView:
    """Widen rendered points into discs of radius ``splat_radius`` (screen space).

    For every pixel the qualifying source is the neighbor within
    ``R_px = splat_radius / meters_per_pixel`` (Euclidean pixel distance)
    whose depth is strictly smaller than the pixel's own (empty counts as
    +inf), smallest depth first, then smallest point index. Sources are read
    from the pre-splat image only.
    """
    r_px = cam.splat_radius / cam.meters_per_pixel
    if r_px <= 0:
        return view
    hw = int(math.ceil(r_px))
    h, w = view.depth.shape
    pad_depth = np.pad(view.depth, hw, constant_values=np.inf)
    pad_hit = np.pad(view.hit_index, hw, constant_values=EMPTY_INDEX)

    best_depth = np.full((h, w), np.inf, dtype=np.float64)
    best_hit = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    best_dv = np.zeros((h, w), dtype=np.int32)
    best_du = np.zeros((h, w), dtype=np.int32)
    r2 = r_px * r_px
    for dv in range(-hw, hw + 1):
        for du in range(-hw, hw + 1):
            if (du == 0 and dv == 0) or du * du + dv * dv > r2:
                continue
            cand_depth = pad_depth[hw + dv : hw + dv + h, hw + du : hw + du + w]
            cand_hit = pad_hit[hw + dv : hw + dv + h, hw + du : hw + du + w]
            better = (cand_depth < best_depth) | ((cand_depth == best_depth) & (cand_hit < best_hit))
            better &= np.isfinite(cand_depth)
            if not np.any(better):
                continue
            best_depth[better] = cand_depth[better]
            best_hit[better] = cand_hit[better]
            best_dv[better] = dv
            best_du[better] = du

    qualify = best_depth < view.depth
    if not np.any(qualify):
        return RenderedView(view.rgb.copy(), view.depth.copy(), view.hit_index.copy())
    vv, uu = np.nonzero(qualify)
    src_v = vv + best_dv[qualify]
    src_u = uu + best_du[qualify]
    out_rgb = view.rgb.copy()
    out_depth = view.depth.copy()
    out_hit = view.hit_index.copy()
    out_rgb[vv, uu] = view.rgb[src_v, src_u]
    out_depth[vv, uu] = view.depth[src_v, src_u]
    out_hit[vv, uu] = view.hit_index[src_v, src_u]
    return RenderedView(out_rgb, out_depth, out_hit)


def render_multiview(
    cloud: ColoredPointCloud,
    cameras,
    background=(0.0, 0.0, 0.0),
    timestep: int = 0,
    n_threads: int = 1,
) -> MultiViewFrame:
    """Z-order render plus splat per camera; empty pixels get the background."""
    bg = np.asarray(background, dtype=np.float32)
    views = []
    for cam in cameras:
        view = splat(zorder_render(cloud, cam, n_threads=n_threads), cam)
        if np.any(bg != 0):
            rgb = view.rgb.copy()
            rgb[view.empty_mask()] = bg
            view = RenderedView(rgb, view.depth, view.hit_index)
        views.append(view)
    return MultiViewFrame(views=views, timestep=timestep)


def benchmark_render(n_points: int, cameras, repeats: int = 5, seed: int = 0, n_threads: int = 1) -> dict:
    """Throughput probe used by the CLI: points/sec and ms per 3-view frame."""
    rng = np.random.default_rng(seed)
    half = 0.49
    pts = rng.uniform(-half, half, size=(n_points, 3))
    cloud = ColoredPointCloud(pts, rng.random((n_points, 3), dtype=np.float32))
    render_multiview(cloud, cameras, n_threads=n_threads)  # warm-up
    start = time.perf_counter()
    for _ in range(repeats):
        render_multiview(cloud, cameras, n_threads=n_threads)
    elapsed = (time.perf_counter() - start) / repeats
    return {
        "points": n_points,
        "views": len(cameras),
        "ms_per_frame": elapsed * 1e3,
        "points_per_sec": n_points / elapsed,
        "threads": n_threads,
    }
