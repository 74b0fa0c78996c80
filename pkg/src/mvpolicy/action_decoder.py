"""Rotation and gripper decoding from denoised video latents.

Future latent frames are upsampled back to per-frame grids (nearest repeat
of each latent frame), two small convolutional stacks pull a global pooled
feature and a local window feature centered on each view's heatmap peak, and
the per-frame fused features cross-attend to the conditioning latent before
a four-layer transformer over the chunk produces 72-bin Euler-delta logits
(per angle, relative to the conditioning frame) and binary gripper logits.

Training consumes ground-truth latents with a small injected noise
(0.05 x the per-sample latent std); inference consumes predicted latents.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import (
    EULER_BINS,
    PoseEE,
    WorkspaceBox,
    dequantize_euler_delta,
    wrap_angle,
)
from .mvdiff import LatentGeometry, SelfAttention, DiffusionConfig


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 128
    feat_channels: int = 64
    local_window: int = 5
    heads: int = 4
    tf_layers: int = 4
    noise_scale: float = 0.05
    euler_bins: int = EULER_BINS

    def __post_init__(self):
        if self.local_window % 2 != 1:
            raise ValueError("local_window must be odd")


@dataclass
class DecoderLossBreakdown:
    loss_roll: float
    loss_pitch: float
    loss_yaw: float
    loss_gripper: float
    loss_pred: float


@dataclass
class ActionChunk:
    """Executable fixed-length action sequence.

    ``euler_bins`` are per-angle deltas relative to the conditioning frame;
    ``euler`` is the assembled absolute triple per frame. ``clamped`` flags
    frames whose decoded position was pulled back inside the workspace.
    """

    positions: np.ndarray  # (T, 3) absolute, meters
    euler_bins: np.ndarray  # (T, 3) ints in [0, 72)
    euler: np.ndarray  # (T, 3) absolute radians
    gripper: np.ndarray  # (T,) ints in {0, 1}
    clamped: np.ndarray  # (T,) bool
    held: np.ndarray | None = None  # (T,) bool, hold-last fallback frames

    @property
    def length(self) -> int:
        return len(self.positions)

    def pose_at(self, k: int) -> PoseEE:
        return PoseEE(self.positions[k], self.euler[k], int(self.gripper[k]))


def temporal_upsample(latent: torch.Tensor, temporal_factor: int) -> torch.Tensor:
    """Repeat each future latent frame tc times: (B, V, 1+L', h, w, C) ->
    (B, V, tc*L', h, w, C). The conditioning frame is excluded."""
    if temporal_factor < 1:
        raise ValueError("temporal_factor must be >= 1")
    return torch.repeat_interleave(latent[:, :, 1:], temporal_factor, dim=2)


def gather_local_windows(grids: torch.Tensor, peaks: torch.Tensor, window: int) -> torch.Tensor:
    """Cut (window x window) cell patches centered at per-view peaks.

    grids: (B, V, T, C, h, w); peaks: (B, T, V, 2) integer (col, row) cell
    coordinates. Borders are zero-padded. Returns (B, V, T, C, window, window).
    """
    b, v, t, c, h, w = grids.shape
    half = window // 2
    padded = F.pad(grids, (half, half, half, half))
    out = grids.new_zeros((b, v, t, c, window, window))
    px = peaks[..., 0].clamp(0, w - 1)
    py = peaks[..., 1].clamp(0, h - 1)
    for bi in range(b):
        for ti in range(t):
            for vi in range(v):
                x0 = int(px[bi, ti, vi])
                y0 = int(py[bi, ti, vi])
                out[bi, vi, ti] = padded[bi, vi, ti, :, y0 : y0 + window, x0 : x0 + window]
    return out


class _ConvStack(nn.Module):
    def __init__(self, in_channels: int, feat: int):
        super().__init__()
        self.reduce = nn.Conv2d(in_channels, feat, kernel_size=1)
        self.conv1 = nn.Conv2d(feat, feat, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(feat, feat, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (N, C, h, w) -> pooled (N, feat)
        h = F.gelu(self.reduce(x))
        h = F.gelu(self.conv1(h))
        h = self.conv2(h)
        return h.mean(dim=(2, 3))


class _TransformerLayer(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class RotGripperPredictor(nn.Module):
    """Per-frame Euler-delta and gripper classifier over upsampled latents."""

    def __init__(self, cfg: DecoderConfig, geom: LatentGeometry, diff_cfg: DiffusionConfig, temporal_factor: int):
        super().__init__()
        self.cfg = cfg
        self.geom = geom
        self.diff_cfg = diff_cfg
        self.temporal_factor = temporal_factor
        self.n_views = geom.views_eff(diff_cfg)
        self.n_cameras = geom.n_cameras
        in_ch = geom.in_channels(diff_cfg)
        feat = cfg.feat_channels
        d = cfg.d_model

        self.global_stack = _ConvStack(in_ch, feat)
        self.local_stack = _ConvStack(in_ch, feat)
        self.fuse = nn.Linear(2 * feat, d)

        self.cond_proj = nn.Linear(in_ch, d)
        self.cond_pos = nn.Parameter(torch.randn(self.n_views * geom.spatial_tokens, d) * 0.02)
        self.cross_q = nn.Linear(d, d)
        self.cross_kv = nn.Linear(d, 2 * d)
        self.cross_out = nn.Linear(d, d)

        self.time_pos = nn.Parameter(
            torch.randn(temporal_factor * (geom.latent_frames - 1), d) * 0.02
        )
        self.layers = nn.ModuleList([_TransformerLayer(d, cfg.heads) for _ in range(cfg.tf_layers)])
        self.norm = nn.LayerNorm(d)
        self.rot_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, 3 * cfg.euler_bins))
        self.grip_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, 2))

    @property
    def chunk_length(self) -> int:
        return self.temporal_factor * (self.geom.latent_frames - 1)

    def extract_features(self, frame_grids: torch.Tensor, peaks: torch.Tensor) -> torch.Tensor:
        """Fused global+local features, mean-aggregated along the view axis.

        frame_grids: (B, V, T, h, w, C); peaks: (B, T, Vcam, 2) latent-cell
        (col, row); returns (B, T, d_model).
        """
        b, v, t, h, w, c = frame_grids.shape
        grids = frame_grids.permute(0, 1, 2, 5, 3, 4)  # (B, V, T, C, h, w)
        flat = grids.reshape(b * v * t, c, h, w)
        global_feat = self.global_stack(flat).reshape(b, v, t, -1)

        # Each effective view reuses its camera's heatmap peak.
        cam_index = torch.arange(v) % self.n_cameras
        peaks_eff = peaks[:, :, cam_index, :]  # (B, T, V, 2)
        windows = gather_local_windows(grids, peaks_eff, self.cfg.local_window)
        local_feat = self.local_stack(
            windows.reshape(b * v * t, c, self.cfg.local_window, self.cfg.local_window)
        ).reshape(b, v, t, -1)

        fused = self.fuse(torch.cat([global_feat, local_feat], dim=-1))
        return fused.mean(dim=1)  # aggregate along the view dimension

    def forward(self, latent: torch.Tensor, peaks: torch.Tensor):
        """latent: (B, V, L, h, w, C) model-space; peaks: (B, T, Vcam, 2).

        Returns (rot_logits (B, T, 3, bins), grip_logits (B, T, 2)).
        """
        b = latent.shape[0]
        frames = temporal_upsample(latent, self.temporal_factor)  # (B, V, T, h, w, C)
        feats = self.extract_features(frames, peaks)

        q = self.cross_q(feats)  # (B, T, d)
        cond_tokens = latent[:, :, 0]  # (B, V, h, w, C)
        cond = self.cond_proj(cond_tokens.reshape(b, -1, latent.shape[-1])) + self.cond_pos[None]
        k, v = self.cross_kv(cond).chunk(2, dim=-1)
        attn = torch.softmax(q @ k.transpose(1, 2) / np.sqrt(q.shape[-1]), dim=-1)
        x = feats + self.cross_out(attn @ v)

        x = x + self.time_pos[None]
        for layer in self.layers:
            x = layer(x)
        x = self.norm(x)
        rot = self.rot_head(x).reshape(b, -1, 3, self.cfg.euler_bins)
        grip = self.grip_head(x)
        return rot, grip


class NonFiniteLossError(RuntimeError):
    pass


def decoder_training_step(
    model: RotGripperPredictor,
    optimizer: torch.optim.Optimizer,
    latents: torch.Tensor,
    peaks: torch.Tensor,
    target_bins: torch.Tensor,
    target_grip: torch.Tensor,
    generator: torch.Generator,
) -> DecoderLossBreakdown:
    """One step on ground-truth latents with injected noise.

    The noise std is ``noise_scale`` times each sample's latent std. The loss
    is the plain sum of the three per-angle cross-entropies and the gripper
    cross-entropy.
    """
    model.train()
    z = latents * 2.0 - 1.0
    std = z.reshape(z.shape[0], -1).std(dim=1).reshape((-1,) + (1,) * (z.ndim - 1))
    noise = torch.randn(z.shape, generator=generator, dtype=z.dtype)
    z_noisy = z + model.cfg.noise_scale * std * noise

    rot_logits, grip_logits = model(z_noisy, peaks)
    per_angle = []
    for angle in range(3):
        per_angle.append(
            F.cross_entropy(rot_logits[:, :, angle].reshape(-1, model.cfg.euler_bins), target_bins[:, :, angle].reshape(-1))
        )
    loss_grip = F.cross_entropy(grip_logits.reshape(-1, 2), target_grip.reshape(-1))
    loss = per_angle[0] + per_angle[1] + per_angle[2] + loss_grip
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite decoder loss: {[float(p) for p in per_angle]}, grip={float(loss_grip)}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    parts = [float(p.detach()) for p in (*per_angle, loss_grip)]
    return DecoderLossBreakdown(parts[0], parts[1], parts[2], parts[3], sum(parts))


@torch.no_grad()
def predict_rot_gripper(model: RotGripperPredictor, latent_pixel: np.ndarray, peaks: np.ndarray):
    """Inference wrapper: pixel-space latent (V, L, h, w, C) -> logits."""
    model.eval()
    z = torch.from_numpy(np.asarray(latent_pixel, dtype=np.float32))[None] * 2.0 - 1.0
    pk = torch.from_numpy(np.asarray(peaks, dtype=np.int64))[None]
    rot, grip = model(z, pk)
    return rot[0].numpy(), grip[0].numpy()


def assemble_chunk(
    positions: np.ndarray,
    rot_logits: np.ndarray,
    grip_logits: np.ndarray,
    cond_pose: PoseEE,
    box: WorkspaceBox,
    held: np.ndarray | None = None,
) -> ActionChunk:
    """Combine decoded positions, rotation bins, and gripper states.

    Per frame the absolute Euler triple is the conditioning pose's plus the
    dequantized argmax delta, re-wrapped; positions are clamped to the
    workspace with the clamp flagged.
    """
    positions = np.asarray(positions, dtype=np.float64)
    bins = np.argmax(rot_logits, axis=-1).astype(np.int64)
    deltas = dequantize_euler_delta(bins)
    euler = wrap_angle(cond_pose.euler[None, :] + deltas)
    gripper = np.argmax(grip_logits, axis=-1).astype(np.int64)
    clamped_pos = box.clamp(positions)
    clamped = np.any(clamped_pos != positions, axis=1)
    return ActionChunk(
        positions=clamped_pos,
        euler_bins=bins,
        euler=euler,
        gripper=gripper,
        clamped=clamped,
        held=None if held is None else np.asarray(held, dtype=bool),
    )


def decoder_config_to_dict(cfg: DecoderConfig) -> dict:
    return asdict(cfg)


def decoder_config_from_dict(d: dict) -> DecoderConfig:
    return DecoderConfig(**d)
