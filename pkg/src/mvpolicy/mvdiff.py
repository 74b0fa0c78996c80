"""Multi-view video diffusion transformer with flow-matching training.

RGB and heatmap latent videos are fused by doubling the view axis (the
default) or by stacking channels (an ablation variant). Every transformer
block runs (a) self-attention over a view's spatio-temporal tokens, (b) a
view-attention pass over all views' tokens within each latent timestep, and
(c) a feed-forward, all modulated by time-conditioned adaptive layer norm.

Training regresses the straight-path velocity (data minus noise) between a
Gaussian noise sample at t=0 and the clean latent at t=1; the conditioning
latent frame is never noised, never scored, and is clamped back after every
sampler step. Classifier-free guidance is fixed at 1, so no guidance
machinery exists here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

FUSE_MODES = ("view_concat", "channel_concat")


@dataclass(frozen=True)
class DiffusionConfig:
    lambda_rgb: float = 0.5
    train_timesteps: int = 1000
    infer_steps: int = 5
    guidance: float = 1.0
    blocks: int = 6
    heads: int = 8
    d_model: int = 256
    mlp_ratio: float = 4.0
    fuse_mode: str = "view_concat"
    predict_rgb: bool = True
    n_tasks: int = 4
    task_conditioning: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.lambda_rgb <= 1.0:
            raise ValueError("lambda_rgb must lie in [0, 1]")
        if self.infer_steps < 1:
            raise ValueError("infer_steps must be >= 1")
        if self.guidance != 1.0:
            raise ValueError("classifier-free guidance is fixed at 1.0")
        if self.fuse_mode not in FUSE_MODES:
            raise ValueError(f"fuse_mode must be one of {FUSE_MODES}")
        if not self.predict_rgb and self.lambda_rgb != 0.0:
            raise ValueError("a heatmap-only model must set lambda_rgb = 0")


@dataclass(frozen=True)
class LatentGeometry:
    """Shape of the latent grids the model consumes."""

    n_cameras: int
    latent_frames: int
    height: int
    width: int
    channels: int  # per stream (RGB or heatmap)

    @property
    def spatial_tokens(self) -> int:
        return self.height * self.width

    def views_eff(self, cfg: DiffusionConfig) -> int:
        if cfg.fuse_mode == "view_concat" and cfg.predict_rgb:
            return 2 * self.n_cameras
        return self.n_cameras

    def in_channels(self, cfg: DiffusionConfig) -> int:
        if cfg.fuse_mode == "channel_concat" and cfg.predict_rgb:
            return 2 * self.channels
        return self.channels


@dataclass
class TrainStats:
    loss_total: float
    loss_vid: float
    loss_heat: float


def view_to_time_tokens(x: torch.Tensor, n_frames: int) -> torch.Tensor:
    """(B, V, T*H*W, C) -> (B, T, V*H*W, C); exact permutation of elements."""
    b, v, s, c = x.shape
    if s % n_frames != 0:
        raise ValueError(f"token count {s} not divisible by {n_frames} frames")
    hw = s // n_frames
    return x.reshape(b, v, n_frames, hw, c).permute(0, 2, 1, 3, 4).reshape(b, n_frames, v * hw, c)


def time_to_view_tokens(x: torch.Tensor, n_views: int) -> torch.Tensor:
    """Inverse of :func:`view_to_time_tokens`."""
    b, t, s, c = x.shape
    if s % n_views != 0:
        raise ValueError(f"token count {s} not divisible by {n_views} views")
    hw = s // n_views
    return x.reshape(b, t, n_views, hw, c).permute(0, 2, 1, 3, 4).reshape(b, n_views, t * hw, c)


def _expand_t(t, ndim: int):
    if torch.is_tensor(t):
        return t.reshape(t.shape + (1,) * (ndim - t.ndim)) if t.ndim > 0 else t
    return t


def interpolate(z_data, noise, t):
    """Straight-path interpolant: z_t = (1-t) * noise + t * z_data.

    Returns ``(z_t, v_target)`` with ``v_target = z_data - noise``, so
    ``z_t + (1 - t) * v_target == z_data`` identically.
    """
    tt = _expand_t(t, z_data.ndim if hasattr(z_data, "ndim") else 0)
    z_t = (1 - tt) * noise + tt * z_data
    return z_t, z_data - noise


def timestep_embedding(t: torch.Tensor, dim: int, scale: float = 1000.0) -> torch.Tensor:
    """Sinusoidal features of t in [0, 1], scaled to the training grid."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t[:, None] * scale * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale[:, None, None, :]) + shift[:, None, None, :]


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("d_model must divide evenly into heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, s, d = x.shape
        qkv = self.qkv(x).reshape(n, s, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2])
        return self.proj(out.transpose(1, 2).reshape(n, s, d))


class ViewAttentiveBlock(nn.Module):
    """Per-view spatio-temporal attention, cross-view attention, feed-forward."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn_st = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn_view = SelfAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim, elementwise_affine=False)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        self.adaln = nn.Sequential(nn.SiLU(), nn.Linear(dim, 9 * dim))
        nn.init.zeros_(self.adaln[1].weight)
        nn.init.zeros_(self.adaln[1].bias)
        # Gates start open: at this scale the model trains from scratch and
        # zero-gated blocks wake up too slowly to fit within the step budget.
        with torch.no_grad():
            gate_bias = self.adaln[1].bias.reshape(9, dim)
            for gate_row in (2, 5, 8):
                gate_bias[gate_row].fill_(1.0)

    def forward(self, x: torch.Tensor, cond: torch.Tensor, n_frames: int) -> torch.Tensor:
        b, v, s, d = x.shape
        mods = self.adaln(cond).chunk(9, dim=-1)
        (sh1, sc1, g1, sh2, sc2, g2, sh3, sc3, g3) = mods

        h = modulate(self.norm1(x), sh1, sc1)
        h = self.attn_st(h.reshape(b * v, s, d)).reshape(b, v, s, d)
        x = x + g1[:, None, None, :] * h

        h = modulate(self.norm2(x), sh2, sc2)
        h = view_to_time_tokens(h, n_frames)
        bt, t, sv, _ = h.shape
        h = self.attn_view(h.reshape(b * t, sv, d)).reshape(b, t, sv, d)
        h = time_to_view_tokens(h, v)
        x = x + g2[:, None, None, :] * h

        x = x + g3[:, None, None, :] * self.mlp(modulate(self.norm3(x), sh3, sc3))
        return x


class ViewAttentiveDiT(nn.Module):
    """Velocity predictor over fused multi-view latent token grids."""

    def __init__(self, cfg: DiffusionConfig, geom: LatentGeometry):
        super().__init__()
        self.cfg = cfg
        self.geom = geom
        d = cfg.d_model
        self.n_views = geom.views_eff(cfg)
        self.in_channels = geom.in_channels(cfg)

        self.token_proj = nn.Linear(self.in_channels, d)
        self.view_emb = nn.Parameter(torch.randn(self.n_views, d) * 0.02)
        self.frame_emb = nn.Parameter(torch.randn(geom.latent_frames, d) * 0.02)
        self.space_emb = nn.Parameter(torch.randn(geom.spatial_tokens, d) * 0.02)
        self.cond_flag_emb = nn.Parameter(torch.zeros(2, d))

        self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.task_emb = nn.Embedding(cfg.n_tasks, d) if cfg.n_tasks > 0 else None
        if self.task_emb is not None:
            nn.init.normal_(self.task_emb.weight, std=0.02)

        self.blocks = nn.ModuleList(
            [ViewAttentiveBlock(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.blocks)]
        )
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False)
        self.final_mod = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * d))
        self.final_proj = nn.Linear(d, self.in_channels)
        nn.init.zeros_(self.final_mod[1].weight)
        nn.init.zeros_(self.final_mod[1].bias)
        nn.init.zeros_(self.final_proj.weight)
        nn.init.zeros_(self.final_proj.bias)

    def positional(self, dtype=None) -> torch.Tensor:
        l, hw = self.geom.latent_frames, self.geom.spatial_tokens
        space_time = (self.frame_emb[:, None, :] + self.space_emb[None, :, :]).reshape(l * hw, -1)
        pos = self.view_emb[:, None, :] + space_time[None, :, :]
        cond_flags = torch.ones(l * hw, dtype=torch.long, device=pos.device)
        cond_flags[:hw] = 0  # latent frame 0 carries the conditioning observation
        pos = pos + self.cond_flag_emb[cond_flags][None, :, :]
        return pos.to(dtype) if dtype is not None else pos

    def forward(self, z: torch.Tensor, t: torch.Tensor, task_id=None) -> torch.Tensor:
        b, v, l, h, w, c = z.shape
        if (v, l, h, w, c) != (self.n_views, self.geom.latent_frames, self.geom.height, self.geom.width, self.in_channels):
            raise ValueError(f"latent shape {z.shape[1:]} does not match model geometry")
        x = self.token_proj(z.reshape(b, v, l * h * w, c))
        x = x + self.positional(x.dtype)[None]
        cond = self.t_mlp(timestep_embedding(t.to(x.dtype), self.cfg.d_model, scale=float(self.cfg.train_timesteps)))
        if task_id is not None and self.task_emb is not None:
            cond = cond + self.task_emb(torch.as_tensor(task_id, device=x.device).reshape(b))
        for block in self.blocks:
            x = block(x, cond, l)
        shift, scale = self.final_mod(cond).chunk(2, dim=-1)
        x = modulate(self.final_norm(x), shift, scale)
        out = self.final_proj(x)
        return out.reshape(b, v, l, h, w, c)

    def split_streams(self, x: torch.Tensor):
        """Split a latent-shaped tensor into (rgb, heatmap) stream views.

        Returns ``(None, x)`` for heatmap-only models.
        """
        if not self.cfg.predict_rgb:
            return None, x
        if self.cfg.fuse_mode == "view_concat":
            vc = self.geom.n_cameras
            return x[:, :vc], x[:, vc:]
        ch = self.geom.channels
        return x[..., :ch], x[..., ch:]


def fuse_latents(rgb_latent: np.ndarray | None, heat_latent: np.ndarray, cfg: DiffusionConfig) -> np.ndarray:
    """Fuse per-stream (V, L, h, w, C) latents into the model input layout."""
    if not cfg.predict_rgb:
        return heat_latent
    if rgb_latent is None:
        raise ValueError("rgb latent required unless predict_rgb is off")
    axis = 0 if cfg.fuse_mode == "view_concat" else -1
    return np.concatenate([rgb_latent, heat_latent], axis=axis)


def split_latents(fused: np.ndarray, n_cameras: int, channels: int, cfg: DiffusionConfig):
    """Inverse of :func:`fuse_latents` on (V_eff, L, h, w, C_in) arrays."""
    if not cfg.predict_rgb:
        return None, fused
    if cfg.fuse_mode == "view_concat":
        return fused[:n_cameras], fused[n_cameras:]
    return fused[..., :channels], fused[..., channels:]


class NonFiniteLossError(RuntimeError):
    pass


def training_step(
    model: ViewAttentiveDiT,
    optimizer: torch.optim.Optimizer,
    latents: torch.Tensor,
    generator: torch.Generator,
    task_ids: torch.Tensor | None = None,
) -> TrainStats:
    """One flow-matching step on a batch of pixel-space latents in [0, 1].

    Per sample: a uniform diffusion timestep, fresh Gaussian noise, MSE of
    predicted vs. target velocity split into RGB-view and heatmap-view terms,
    combined as lambda * L_vid + (1 - lambda) * L_heat, one optimizer step.
    The conditioning latent frame enters the model clean and contributes no
    loss.
    """
    cfg = model.cfg
    model.train()
    z_data = latents * 2.0 - 1.0
    b = z_data.shape[0]
    k = torch.randint(cfg.train_timesteps, (b,), generator=generator)
    t = k.to(z_data.dtype) / cfg.train_timesteps
    noise = torch.randn(z_data.shape, generator=generator, dtype=z_data.dtype)
    z_t, v_target = interpolate(z_data, noise, t)
    z_t[:, :, 0] = z_data[:, :, 0]

    v_hat = model(z_t, t, task_ids)
    rgb_hat, heat_hat = model.split_streams(v_hat[:, :, 1:])
    rgb_tgt, heat_tgt = model.split_streams(v_target[:, :, 1:])
    loss_heat = F.mse_loss(heat_hat, heat_tgt)
    if rgb_hat is None:
        loss_vid = torch.zeros((), dtype=loss_heat.dtype)
    else:
        loss_vid = F.mse_loss(rgb_hat, rgb_tgt)
    loss = cfg.lambda_rgb * loss_vid + (1.0 - cfg.lambda_rgb) * loss_heat
    if not torch.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite diffusion loss (vid={float(loss_vid)}, heat={float(loss_heat)}, "
            f"t={t.tolist()}, |z|max={float(z_data.abs().max())})"
        )
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    # Report the combination recomputed from the logged terms so the Eq.-style
    # decomposition holds exactly on every record.
    vid, heat = float(loss_vid.detach()), float(loss_heat.detach())
    return TrainStats(cfg.lambda_rgb * vid + (1.0 - cfg.lambda_rgb) * heat, vid, heat)


@torch.no_grad()
def sample(
    model: ViewAttentiveDiT,
    cond_latent: np.ndarray,
    rng_seed: int,
    infer_steps: int | None = None,
    task_id: int | None = None,
) -> np.ndarray:
    """Euler-integrate the learned velocity field from seeded noise.

    ``cond_latent`` is the encoded current observation, shape
    (V_eff, 1, h, w, C), pixel space. The conditioning positions are
    overwritten with it after every step and copied bit-for-bit into the
    returned (V_eff, L, h, w, C) latent.
    """
    cfg = model.cfg
    geom = model.geom
    n = infer_steps if infer_steps is not None else cfg.infer_steps
    if n < 1:
        raise ValueError("need at least one integration step")
    model.eval()
    gen = torch.Generator().manual_seed(int(rng_seed))
    shape = (1, model.n_views, geom.latent_frames, geom.height, geom.width, model.in_channels)
    z = torch.randn(shape, generator=gen, dtype=torch.float32)
    cond_np = np.asarray(cond_latent, dtype=np.float32)
    cond_z = torch.from_numpy(cond_np)[None] * 2.0 - 1.0
    z[:, :, :1] = cond_z
    task = None
    if task_id is not None:
        task = torch.tensor([int(task_id)])
    for step in range(n):
        t = torch.full((1,), step / n, dtype=torch.float32)
        v_hat = model(z, t, task)
        z = z + v_hat / n
        z[:, :, :1] = cond_z
    future = ((z[0, :, 1:] + 1.0) / 2.0).numpy().astype(np.float32)
    return np.concatenate([cond_np, future], axis=1)


def config_to_dict(cfg: DiffusionConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> DiffusionConfig:
    return DiffusionConfig(**d)
