"""Truncated Gaussian end-effector heatmaps and their colorized RGB form.

A heatmap pixel holds ``exp(-||x - x_hat||^2 / (2 sigma^2))`` when that value
reaches the truncation threshold ``tau`` and exactly zero otherwise, where
``x_hat`` is the fractional (sub-pixel) projection of the end effector.
Colorization triplicates the value into RGB so heatmap videos ride the same
codec as RGB videos and stay losslessly invertible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import OrthoCamera, project_point


@dataclass(frozen=True)
class HeatmapParams:
    """Spread and truncation of the Gaussian.

    ``sigma`` is in pixels at ``reference_size`` and scales proportionally
    with the actual image size (1.5 px at 256 px by default).
    """

    sigma: float = 1.5
    tau: float = 0.01
    reference_size: int = 256

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")

    def sigma_px(self, image_size: int) -> float:
        return self.sigma * image_size / self.reference_size


@dataclass
class Heatmap:
    """H x W probability image; every value is 0 or in [tau, 1]."""

    values: np.ndarray  # (H, W) float64
    view_id: int = -1
    timestep: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


def render_heatmap(cam: OrthoCamera, ee_position, params: HeatmapParams, t: int = 0) -> Heatmap:
    """Truncated Gaussian centered at the fractional projection of the ee."""
    u_hat, v_hat, _ = project_point(cam, ee_position)
    sigma = params.sigma_px(cam.width)
    du2 = (np.arange(cam.width, dtype=np.float64) - u_hat) ** 2
    dv2 = (np.arange(cam.height, dtype=np.float64) - v_hat) ** 2
    p = np.exp(-(dv2[:, None] + du2[None, :]) / (2.0 * sigma * sigma))
    values = np.where(p >= params.tau, p, 0.0)
    return Heatmap(values, view_id=cam.view_id, timestep=t)


def colorize(heatmap: Heatmap) -> np.ndarray:
    """Triplicate values into an (H, W, 3) float32 image."""
    return np.repeat(heatmap.values[:, :, None], 3, axis=2).astype(np.float32)


def decolorize(rgb, view_id: int = -1, timestep: int = -1) -> Heatmap:
    """Channel mean clamped to [0, 1]; accepts arbitrary predicted images."""
    img = np.asarray(rgb, dtype=np.float64)
    values = np.clip(img.mean(axis=2), 0.0, 1.0)
    return Heatmap(values, view_id=view_id, timestep=timestep)


def argpeak(heatmap: Heatmap):
    """Location and value of the maximum, or None when the map is all zero.

    Ties resolve in row-major scan order (smallest v, then smallest u).
    """
    flat = int(np.argmax(heatmap.values))
    v, u = divmod(flat, heatmap.values.shape[1])
    value = float(heatmap.values[v, u])
    if value <= 0.0:
        return None
    return u, v, value
