"""Invertible patchify codec between multi-view videos and latent grids.

A (1+T)-frame video compresses to 1 + T/tc latent frames: the conditioning
frame is encoded alone (tiled tc times so every latent frame shares one
channel layout) and the T future frames are grouped tc at a time. Spatially
each s x s pixel block folds into channels, giving 3 * s^2 * tc latent
channels. The mapping is a pure rearrangement, exactly invertible; a learned
codec can be slotted in behind the same interface later.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from einops import rearrange


@dataclass(frozen=True)
class CodecConfig:
    spatial_factor: int = 4
    temporal_factor: int = 4
    mode: str = "patchify"

    def __post_init__(self):
        if self.spatial_factor < 1 or self.temporal_factor < 1:
            raise ValueError("compression factors must be >= 1")
        if self.mode != "patchify":
            raise NotImplementedError("only the patchify codec is implemented")

    @property
    def latent_channels(self) -> int:
        return 3 * self.spatial_factor**2 * self.temporal_factor

    def latent_frames(self, n_frames: int) -> int:
        """Latent frame count for a (1+T)-frame video."""
        t = n_frames - 1
        if t < 0 or t % self.temporal_factor != 0:
            raise ValueError(f"frame count {n_frames} is not 1 + k * {self.temporal_factor}")
        return 1 + t // self.temporal_factor


@dataclass
class LatentVideo:
    """(V, L, H/s, W/s, C) latent tensor.

    ``first_frame_repeated`` flags that latent frame 0 encodes a single
    conditioning frame tiled ``tc`` times; decode collapses the tiling.
    """

    tensor: np.ndarray
    config: CodecConfig
    first_frame_repeated: bool = True

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor)
        if self.tensor.ndim != 5:
            raise ValueError("latent tensor must be (V, L, h, w, C)")
        if self.tensor.shape[-1] % self.config.latent_channels != 0:
            raise ValueError(
                f"channel count {self.tensor.shape[-1]} incompatible with codec "
                f"({self.config.latent_channels} per stream)"
            )
        if not np.all(np.isfinite(self.tensor)):
            raise ValueError("latent tensor must be finite")

    @property
    def n_views(self) -> int:
        return self.tensor.shape[0]

    @property
    def n_latent_frames(self) -> int:
        return self.tensor.shape[1]


def encode(video, cfg: CodecConfig) -> LatentVideo:
    """Patchify a (V, 1+T, H, W, 3) video into a latent grid."""
    vid = np.asarray(video)
    if vid.ndim != 5 or vid.shape[-1] != 3:
        raise ValueError("video must be (V, 1+T, H, W, 3)")
    _, n_frames, h, w, _ = vid.shape
    s, tc = cfg.spatial_factor, cfg.temporal_factor
    cfg.latent_frames(n_frames)  # validates the temporal layout
    if h % s != 0 or w % s != 0:
        raise ValueError(f"spatial dims {(h, w)} not divisible by {s}")

    cond = np.repeat(vid[:, :1], tc, axis=1)
    parts = [cond] if n_frames == 1 else [cond, vid[:, 1:]]
    blocks = [
        rearrange(p, "v (g tc) (hh s1) (ww s2) c -> v g hh ww (tc s1 s2 c)", tc=tc, s1=s, s2=s)
        for p in parts
    ]
    return LatentVideo(np.concatenate(blocks, axis=1), cfg)


def decode(latent: LatentVideo, cfg: CodecConfig | None = None) -> np.ndarray:
    """Exact inverse of :func:`encode`; returns a (V, 1+T, H, W, 3) video."""
    cfg = cfg or latent.config
    s, tc = cfg.spatial_factor, cfg.temporal_factor
    x = latent.tensor
    frames = rearrange(x, "v g hh ww (tc s1 s2 c) -> v (g tc) (hh s1) (ww s2) c", tc=tc, s1=s, s2=s)
    # Latent frame 0 holds tc copies of the conditioning frame; keep copy 0.
    return np.concatenate([frames[:, :1], frames[:, tc:]], axis=1)
