"""Episode files, training clips, and frame export.

Episode container (format "mvep-1", little-endian throughout, documented
bit-exactly in docs/format.md):

    magic  b"MVEP"
    u32    container version (1)
    u64    manifest length in bytes
    bytes  UTF-8 JSON manifest (task, seed, stride, frame count, cameras,
           workspace, format_version, extra)
    per frame:
        u32  point count n
        n x  (3 float32 xyz meters, 3 uint8 rgb)
        pose: 3 float32 position, 3 float32 euler radians, 1 uint8 gripper

Clips are rendered on the fly so the SE(3) augmentation resamples each time;
one augmentation draw covers all 25 frames of a clip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    AugmentParams,
    ColoredPointCloud,
    OrthoCamera,
    PoseEE,
    RigidTransform,
    WorkspaceBox,
    apply_transform,
    crop_workspace,
    quantize_euler_delta,
    sample_se3_augment,
    wrap_angle,
)
from .heatmap import Heatmap, HeatmapParams, argpeak, colorize, render_heatmap
from .rasterizer import render_multiview

FORMAT_VERSION = "mvep-1"
MAGIC = b"MVEP"
CONTAINER_VERSION = 1

STREAMS = ("rgb", "heatmap", "overlay")
PEAK_MARKER = np.array([1.0, 0.0, 1.0], dtype=np.float32)


class EpisodeFormatError(ValueError):
    """Structurally invalid episode file."""


class EpisodeVersionError(EpisodeFormatError):
    """Foreign format version; nothing was read."""


class EpisodeTruncatedError(EpisodeFormatError):
    def __init__(self, path, frame_index: int):
        super().__init__(f"{path}: truncated while reading frame {frame_index}")
        self.frame_index = frame_index


def camera_to_dict(cam: OrthoCamera) -> dict:
    return {
        "view_id": cam.view_id,
        "rotation": np.asarray(cam.rotation).reshape(-1).tolist(),
        "translation": np.asarray(cam.translation).tolist(),
        "image_size": list(cam.image_size),
        "meters_per_pixel": cam.meters_per_pixel,
        "splat_radius": cam.splat_radius,
        "depth_range": list(cam.depth_range),
    }


def camera_from_dict(d: dict) -> OrthoCamera:
    return OrthoCamera(
        view_id=d["view_id"],
        rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
        translation=np.asarray(d["translation"], dtype=np.float64),
        image_size=tuple(d["image_size"]),
        meters_per_pixel=d["meters_per_pixel"],
        splat_radius=d["splat_radius"],
        depth_range=tuple(d["depth_range"]),
    )


def box_to_dict(box: WorkspaceBox) -> dict:
    return {"center": list(box.center), "edge_length": box.edge_length}


def box_from_dict(d: dict) -> WorkspaceBox:
    return WorkspaceBox(tuple(d["center"]), d["edge_length"])


@dataclass
class Episode:
    """In-memory demonstration: per-frame clouds and poses plus metadata."""

    task_id: str
    seed: int
    stride: int
    cameras: list
    workspace: WorkspaceBox
    clouds: list
    poses: list
    extra: dict = field(default_factory=dict)

    @property
    def frame_count(self) -> int:
        return len(self.clouds)

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "task_id": self.task_id,
            "seed": self.seed,
            "stride": self.stride,
            "frame_count": self.frame_count,
            "cameras": [camera_to_dict(c) for c in self.cameras],
            "workspace": box_to_dict(self.workspace),
            "extra": self.extra,
        }


def write_episode(episode: Episode, path) -> None:
    if len(episode.clouds) != len(episode.poses):
        raise EpisodeFormatError("cloud/pose frame counts differ")
    manifest = json.dumps(episode.manifest(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(CONTAINER_VERSION).tobytes())
        f.write(np.uint64(len(manifest)).tobytes())
        f.write(manifest)
        for cloud, pose in zip(episode.clouds, episode.poses):
            n = len(cloud)
            f.write(np.uint32(n).tobytes())
            f.write(cloud.positions.astype("<f4").tobytes())
            f.write(np.round(np.clip(cloud.colors, 0, 1) * 255).astype(np.uint8).tobytes())
            f.write(pose.position.astype("<f4").tobytes())
            f.write(pose.euler.astype("<f4").tobytes())
            f.write(np.uint8(pose.gripper).tobytes())


def read_episode(path) -> Episode:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise EpisodeFormatError(f"{path}: not an episode file")
    version = int(np.frombuffer(data[4:8], dtype="<u4")[0])
    if version != CONTAINER_VERSION:
        raise EpisodeVersionError(f"{path}: container version {version}, reader supports {CONTAINER_VERSION}")
    mlen = int(np.frombuffer(data[8:16], dtype="<u8")[0])
    if len(data) < 16 + mlen:
        raise EpisodeFormatError(f"{path}: truncated manifest")
    manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise EpisodeVersionError(
            f"{path}: format version {manifest.get('format_version')!r}, reader supports {FORMAT_VERSION!r}"
        )
    frame_count = int(manifest["frame_count"])
    offset = 16 + mlen
    clouds, poses = [], []
    for i in range(frame_count):
        if offset + 4 > len(data):
            raise EpisodeTruncatedError(path, i)
        n = int(np.frombuffer(data, dtype="<u4", count=1, offset=offset)[0])
        offset += 4
        need = n * (12 + 3) + 12 + 12 + 1
        if offset + need > len(data):
            raise EpisodeTruncatedError(path, i)
        pos = np.frombuffer(data, dtype="<f4", count=3 * n, offset=offset).reshape(n, 3)
        offset += 12 * n
        col = np.frombuffer(data, dtype=np.uint8, count=3 * n, offset=offset).reshape(n, 3)
        offset += 3 * n
        p = np.frombuffer(data, dtype="<f4", count=3, offset=offset)
        offset += 12
        e = np.frombuffer(data, dtype="<f4", count=3, offset=offset)
        offset += 12
        g = int(data[offset])
        offset += 1
        clouds.append(ColoredPointCloud(pos.astype(np.float64), col.astype(np.float32) / 255.0))
        poses.append(PoseEE(p.astype(np.float64), e.astype(np.float64), g))
    if offset != len(data):
        raise EpisodeFormatError(
            f"{path}: frame count mismatch ({len(data) - offset} trailing bytes after {frame_count} frames)"
        )
    return Episode(
        task_id=manifest["task_id"],
        seed=int(manifest["seed"]),
        stride=int(manifest["stride"]),
        cameras=[camera_from_dict(c) for c in manifest["cameras"]],
        workspace=box_from_dict(manifest["workspace"]),
        clouds=clouds,
        poses=poses,
        extra=manifest.get("extra", {}),
    )


class ClipRangeError(ValueError):
    """Episode too short for the requested clip window."""


@dataclass
class TrainingClip:
    """One conditioning frame plus 24 future frames with training targets."""

    rgb: np.ndarray  # (V, 1+T, H, W, 3) float32
    heat: np.ndarray  # (V, 1+T, H, W) float32
    peaks: np.ndarray  # (1+T, V, 2) int64 pixel (u, v) of each heatmap peak
    target_positions: np.ndarray  # (T, 3)
    target_euler_bins: np.ndarray  # (T, 3) int64
    target_gripper: np.ndarray  # (T,) int64
    cond_pose: PoseEE
    provenance: dict

    @property
    def chunk_length(self) -> int:
        return len(self.target_positions)


def build_clip(
    episode: Episode,
    start_frame: int,
    cameras,
    heatmap_params: HeatmapParams,
    augment: AugmentParams | None = None,
    augment_seed: int = 0,
    chunk: int = 24,
    n_threads: int = 1,
) -> TrainingClip:
    """Render a (1 + chunk)-frame training clip starting at ``start_frame``.

    One SE(3) augmentation sample (when enabled) transforms every frame's
    cloud and pose; clouds are re-cropped to the workspace afterwards so
    projections stay in frame. Targets are relative to the conditioning
    frame: future Euler deltas quantized to bins, absolute future positions,
    and future gripper bits.
    """
    if start_frame < 0 or start_frame + chunk >= episode.frame_count:
        raise ClipRangeError(
            f"clip [{start_frame}, {start_frame + chunk}] exceeds episode of {episode.frame_count} frames"
        )
    box = episode.workspace
    transform = (
        sample_se3_augment(augment, augment_seed, center=box.center)
        if augment is not None
        else RigidTransform.identity()
    )

    n_views = len(cameras)
    h, w = cameras[0].image_size
    frames = chunk + 1
    rgb = np.zeros((n_views, frames, h, w, 3), dtype=np.float32)
    heat = np.zeros((n_views, frames, h, w), dtype=np.float32)
    peaks = np.zeros((frames, n_views, 2), dtype=np.int64)
    poses = []
    for k in range(frames):
        idx = start_frame + k
        cloud, pose = apply_transform(transform, episode.clouds[idx], episode.poses[idx])
        cloud = crop_workspace(cloud, box)
        mv = render_multiview(cloud, cameras, timestep=idx, n_threads=n_threads)
        for v, view in enumerate(mv.views):
            rgb[v, k] = view.rgb
            hm = render_heatmap(cameras[v], pose.position, heatmap_params, t=idx)
            heat[v, k] = hm.values.astype(np.float32)
            peak = argpeak(hm)
            peaks[k, v] = (w // 2, h // 2) if peak is None else (peak[0], peak[1])
        poses.append(pose)

    cond = poses[0]
    deltas = np.stack([wrap_angle(p.euler - cond.euler) for p in poses[1:]])
    return TrainingClip(
        rgb=rgb,
        heat=heat,
        peaks=peaks,
        target_positions=np.stack([p.position for p in poses[1:]]),
        target_euler_bins=np.stack([quantize_euler_delta(d) for d in deltas]).astype(np.int64),
        target_gripper=np.array([p.gripper for p in poses[1:]], dtype=np.int64),
        cond_pose=cond,
        provenance={
            "episode_task": episode.task_id,
            "episode_seed": episode.seed,
            "start_frame": start_frame,
            "augment_seed": augment_seed if augment is not None else None,
        },
    )


def heat_video_to_rgb(heat: np.ndarray) -> np.ndarray:
    """Colorize a (V, F, H, W) heatmap video into (V, F, H, W, 3)."""
    return np.repeat(heat[..., None], 3, axis=-1).astype(np.float32)


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_overlay(rgb_frame: np.ndarray, heat_frame: np.ndarray) -> np.ndarray:
    """RGB frame with a crosshair on the paired heatmap's peak pixel."""
    out = np.asarray(rgb_frame, dtype=np.float32).copy()
    peak = argpeak(Heatmap(np.asarray(heat_frame, dtype=np.float64)))
    if peak is None:
        return out
    u, v, _ = peak
    h, w = out.shape[:2]
    for d in range(-3, 4):
        if 0 <= v + d < h:
            out[v + d, u] = PEAK_MARKER
        if 0 <= u + d < w:
            out[v, u + d] = PEAK_MARKER
    out[v, u] = PEAK_MARKER
    return out


def export_frames_png(rgb: np.ndarray, heat: np.ndarray, out_dir) -> int:
    """Write rgb/heatmap/overlay PNGs as ``out_dir/<stream>/<view>/<t>.png``.

    Returns the number of files written (views x frames x 3 streams).
    """
    out_dir = Path(out_dir)
    n_views, frames = rgb.shape[0], rgb.shape[1]
    count = 0
    for stream in STREAMS:
        for v in range(n_views):
            d = out_dir / stream / str(v)
            d.mkdir(parents=True, exist_ok=True)
            for t in range(frames):
                if stream == "rgb":
                    img = rgb[v, t]
                elif stream == "heatmap":
                    img = np.repeat(heat[v, t][..., None], 3, axis=-1)
                else:
                    img = render_overlay(rgb[v, t], heat[v, t])
                Image.fromarray(_to_u8(img)).save(d / f"{t}.png")
                count += 1
    return count


def encode_frame_png(img: np.ndarray) -> bytes:
    """In-memory PNG encoding for the rollout server."""
    import io

    buf = io.BytesIO()
    Image.fromarray(_to_u8(img)).save(buf, format="PNG")
    return buf.getvalue()
