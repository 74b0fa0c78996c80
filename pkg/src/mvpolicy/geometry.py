"""Workspace geometry: point clouds, SE(3) poses and augmentation, orthographic
cameras, and Euler-angle quantization.

Conventions used throughout the package:

* World and view frames are right-handed, units are meters.
* Euler triples are stored as ``(roll, pitch, yaw)`` in radians, each wrapped
  into ``(-pi, pi]``, composed intrinsically in Z-Y-X (yaw, pitch, roll) order.
* An orthographic camera's view frame has ``+z`` along the viewing direction
  and ``x/y`` spanning the image plane; ``u`` grows with view ``x`` (image
  columns), ``v`` with view ``y`` (image rows).

All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * math.pi

EULER_BINS = 72
EULER_BIN_WIDTH = TWO_PI / EULER_BINS


def wrap_angle(angle):
    """Wrap angles (scalar or array) into (-pi, pi]."""
    a = np.asarray(angle, dtype=np.float64)
    wrapped = np.mod(a + np.pi, TWO_PI) - np.pi
    wrapped = np.where(wrapped <= -np.pi, np.pi, wrapped)
    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


def euler_to_matrix(euler) -> np.ndarray:
    """Rotation matrix from a (roll, pitch, yaw) triple, intrinsic Z-Y-X."""
    roll, pitch, yaw = np.asarray(euler, dtype=np.float64)
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def matrix_to_euler(matrix) -> np.ndarray:
    """Inverse of :func:`euler_to_matrix`; components wrapped into (-pi, pi]."""
    yaw, pitch, roll = Rotation.from_matrix(np.asarray(matrix, dtype=np.float64)).as_euler("ZYX")
    return wrap_angle(np.array([roll, pitch, yaw]))


@dataclass
class ColoredPointCloud:
    """N points with world positions (meters) and RGB colors in [0, 1]."""

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) float32

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float32).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ValueError("positions/colors length mismatch")

    def __len__(self) -> int:
        return len(self.positions)

    @staticmethod
    def empty() -> "ColoredPointCloud":
        return ColoredPointCloud(np.zeros((0, 3)), np.zeros((0, 3)))

    @staticmethod
    def concatenate(clouds) -> "ColoredPointCloud":
        clouds = list(clouds)
        if not clouds:
            return ColoredPointCloud.empty()
        return ColoredPointCloud(
            np.concatenate([c.positions for c in clouds], axis=0),
            np.concatenate([c.colors for c in clouds], axis=0),
        )


@dataclass
class PoseEE:
    """End-effector pose: position, (roll, pitch, yaw) Euler triple, gripper bit.

    ``gripper`` is 0 for open, 1 for closed.
    """

    position: np.ndarray
    euler: np.ndarray
    gripper: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.euler = wrap_angle(np.asarray(self.euler, dtype=np.float64).reshape(3))
        self.gripper = int(self.gripper)
        if self.gripper not in (0, 1):
            raise ValueError(f"gripper must be 0 or 1, got {self.gripper}")

    def copy(self) -> "PoseEE":
        return PoseEE(self.position.copy(), self.euler.copy(), self.gripper)

    def rotation_matrix(self) -> np.ndarray:
        return euler_to_matrix(self.euler)


@dataclass(frozen=True)
class WorkspaceBox:
    """Axis-aligned cubic workspace volume; membership is closed (faces kept)."""

    center: tuple = (0.0, 0.0, 0.0)
    edge_length: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.edge_length <= 0:
            raise ValueError("edge_length must be positive")

    @property
    def half(self) -> float:
        return self.edge_length / 2.0

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) - self.half

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) + self.half

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def corners(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array(
            [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
        )

    def clamp(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.clip(p, self.lo, self.hi)


def crop_workspace(cloud: ColoredPointCloud, box: WorkspaceBox) -> ColoredPointCloud:
    """Keep exactly the points inside the closed box, preserving order."""
    mask = box.contains(cloud.positions)
    return ColoredPointCloud(cloud.positions[mask], cloud.colors[mask])


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid transform p -> R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def yaw_about(angle: float, center) -> "RigidTransform":
        """Rotation by ``angle`` about the vertical (+z) axis through ``center``."""
        c = np.asarray(center, dtype=np.float64).reshape(3)
        rot = Rotation.from_euler("Z", angle).as_matrix()
        return RigidTransform(rot, c - rot @ c)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def is_rigid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(
            np.allclose(r @ r.T, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) < max(tol, 1e-9)
        )


@dataclass(frozen=True)
class AugmentParams:
    """Bounds for the per-episode SE(3) training augmentation.

    Defaults: +-3 cm planar translation, no vertical translation, +-15 degree
    yaw about the vertical through the workspace center. Gravity-consistent
    scenes stay gravity-consistent under these.
    """

    max_translation: tuple = (0.03, 0.03, 0.0)
    max_yaw: float = math.radians(15.0)

    def __post_init__(self):
        object.__setattr__(self, "max_translation", tuple(float(t) for t in self.max_translation))
        if any(t < 0 for t in self.max_translation) or self.max_yaw < 0:
            raise ValueError("augmentation bounds must be non-negative")


def sample_se3_augment(params: AugmentParams, rng_seed: int, center=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Sample a yaw-about-center rotation followed by a bounded translation.

    Pure function of (params, rng_seed, center); the yaw is drawn first, then
    the three translation components, all uniform within their bounds.
    """
    rng = np.random.default_rng(rng_seed)
    yaw = float(rng.uniform(-params.max_yaw, params.max_yaw)) if params.max_yaw > 0 else 0.0
    trans = np.array(
        [rng.uniform(-m, m) if m > 0 else 0.0 for m in params.max_translation], dtype=np.float64
    )
    base = RigidTransform.yaw_about(yaw, center)
    return RigidTransform(base.rotation, base.translation + trans)


def apply_transform(transform: RigidTransform, cloud: ColoredPointCloud, pose: PoseEE):
    """Map a cloud and an end-effector pose through one rigid transform.

    The same transform must be applied to every timestep of an episode (one
    augmentation sample per episode). Colors and the gripper bit are
    untouched; the Euler triple is recomposed and re-wrapped.
    """
    new_cloud = ColoredPointCloud(transform.apply(cloud.positions), cloud.colors.copy())
    new_rot = transform.rotation @ pose.rotation_matrix()
    new_pose = PoseEE(transform.apply(pose.position), matrix_to_euler(new_rot), pose.gripper)
    return new_cloud, new_pose


class CameraError(ValueError):
    """Camera definition violates an invariant (non-rigid, box out of frame)."""


@dataclass(frozen=True)
class OrthoCamera:
    """Orthographic camera: rigid world-to-view map plus pixel scaling.

    ``depth_range`` bounds the view-frame z of any renderable point; the
    rasterizer's depth packing quantizes into it.
    """

    view_id: int
    rotation: np.ndarray  # (3, 3) world -> view
    translation: np.ndarray  # (3,)
    image_size: tuple  # (height, width) px
    meters_per_pixel: float
    splat_radius: float = 0.0
    depth_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        object.__setattr__(self, "depth_range", (float(self.depth_range[0]), float(self.depth_range[1])))
        if self.meters_per_pixel <= 0:
            raise CameraError("meters_per_pixel must be positive")
        if self.splat_radius < 0:
            raise CameraError("splat_radius must be non-negative")
        if self.depth_range[1] <= self.depth_range[0]:
            raise CameraError("depth_range must be increasing")

    @property
    def height(self) -> int:
        return self.image_size[0]

    @property
    def width(self) -> int:
        return self.image_size[1]

    def world_to_view(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def project(self, points):
        """Project points to fractional (u, v, depth); no rounding, no clipping."""
        view = self.world_to_view(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        u = view[:, 0] / self.meters_per_pixel + self.width / 2.0
        v = view[:, 1] / self.meters_per_pixel + self.height / 2.0
        return u, v, view[:, 2]

    def unproject(self, u, v, depth) -> np.ndarray:
        """Exact inverse of :meth:`project` given the depth."""
        u = np.asarray(u, dtype=np.float64)
        view = np.stack(
            [
                (u - self.width / 2.0) * self.meters_per_pixel,
                (np.asarray(v, dtype=np.float64) - self.height / 2.0) * self.meters_per_pixel,
                np.asarray(depth, dtype=np.float64),
            ],
            axis=-1,
        )
        return (view - self.translation) @ self.rotation


def project_point(cam: OrthoCamera, point):
    """Scalar convenience wrapper around :meth:`OrthoCamera.project`."""
    u, v, d = cam.project(np.asarray(point, dtype=np.float64).reshape(1, 3))
    return float(u[0]), float(v[0]), float(d[0])


def validate_camera(cam: OrthoCamera, box: WorkspaceBox) -> None:
    """Raise CameraError unless the transform is rigid and the whole box
    projects inside the image (every corner rounds to an in-bounds pixel)."""
    if not RigidTransform(cam.rotation, cam.translation).is_rigid(tol=1e-8):
        raise CameraError(f"view {cam.view_id}: world_to_view is not a proper rigid transform")
    u, v, d = cam.project(box.corners())
    if not (np.all(u > -0.5) and np.all(u < cam.width - 0.5) and np.all(v > -0.5) and np.all(v < cam.height - 0.5)):
        raise CameraError(f"view {cam.view_id}: workspace box projects outside the image bounds")
    lo, hi = cam.depth_range
    if d.min() < lo or d.max() > hi:
        raise CameraError(f"view {cam.view_id}: workspace depths exceed depth_range")


# View axes (rows: view x, y, z in world coordinates) for the fixed rig.
_RIG_AXES = {
    "top": np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
    "front": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
    "side": np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]),
}


def default_camera_rig(
    box: WorkspaceBox,
    image_size: int = 256,
    margin_px: int = 3,
    splat_radius: float | None = None,
) -> list:
    """Three fixed orthogonal orthographic views (top, front, side) of the box.

    The pixel pitch maps the box edge onto ``image_size - 2 * margin_px``
    pixels so the box always projects strictly inside the frame; at the
    defaults (256 px, 1 m box) one pixel covers 4 mm. The default splat
    radius is one pixel's metric footprint.
    """
    usable = image_size - 2 * margin_px
    if usable <= 0:
        raise CameraError("margin leaves no usable pixels")
    mpp = box.edge_length / usable
    if splat_radius is None:
        splat_radius = mpp
    center = np.asarray(box.center, dtype=np.float64)
    cams = []
    for view_id, name in enumerate(("top", "front", "side")):
        rot = _RIG_AXES[name]
        trans = -rot @ center
        depths = (np.asarray(box.corners()) @ rot.T + trans)[:, 2]
        cam = OrthoCamera(
            view_id=view_id,
            rotation=rot,
            translation=trans,
            image_size=(image_size, image_size),
            meters_per_pixel=mpp,
            splat_radius=splat_radius,
            depth_range=(float(depths.min()) - 1e-6, float(depths.max()) + 1e-6),
        )
        validate_camera(cam, box)
        cams.append(cam)
    return cams


def quantize_euler_delta(delta) -> np.ndarray | int:
    """Quantize an Euler-angle delta (radians) into one of 72 bins (5 deg each).

    The delta is wrapped into (-pi, pi] first; the wrap boundary lands in the
    top bin. Scalar in, scalar out.
    """
    wrapped = np.asarray(wrap_angle(delta), dtype=np.float64)
    bins = np.floor((wrapped + np.pi) / EULER_BIN_WIDTH).astype(np.int64)
    bins = np.clip(bins, 0, EULER_BINS - 1)
    if np.ndim(delta) == 0:
        return int(bins)
    return bins


def dequantize_euler_delta(bins) -> np.ndarray | float:
    """Center of an Euler-delta bin; inverse of quantization up to 2.5 deg."""
    b = np.asarray(bins, dtype=np.float64)
    centers = -np.pi + (b + 0.5) * EULER_BIN_WIDTH
    if np.ndim(bins) == 0:
        return float(centers)
    return centers
