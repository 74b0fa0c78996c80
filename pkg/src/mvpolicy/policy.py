"""End-to-end inference: observation -> multi-view render -> diffusion sample
-> heatmap back-projection + rotation/gripper decoding -> action chunk."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mvdiff
from .action_decoder import ActionChunk, assemble_chunk, predict_rot_gripper
from .backprojection import WorkspaceGrid, trajectory_from_heatmap_video
from .codec import LatentVideo, decode, encode
from .data import heat_video_to_rgb
from .geometry import crop_workspace, project_point
from .heatmap import argpeak, decolorize, render_heatmap
from .rasterizer import render_multiview, round_half_away
from .sim.world import TASKS
from .train import DECODER_FINAL, DIFFUSION_FINAL, load_decoder, load_diffusion, peaks_to_cells


@dataclass
class PolicyRollout:
    """One planned chunk plus the predicted videos backing it."""

    chunk: ActionChunk
    rgb_video: np.ndarray  # (V, 1+T, H, W, 3) in [0, 1]
    heat_video: np.ndarray  # (V, 1+T, H, W) in [0, 1]
    seed: int


class MVVideoPolicy:
    """Policy wrapper over a diffusion checkpoint and a decoder checkpoint."""

    def __init__(self, diffusion_ckpt, decoder_ckpt, infer_steps: int | None = None):
        self.model, self.cfg = load_diffusion(diffusion_ckpt)
        self.decoder, dec_run = load_decoder(decoder_ckpt)
        if dec_run.codec != self.cfg.codec or dec_run.image_size != self.cfg.image_size:
            raise ValueError("decoder checkpoint was trained for a different latent geometry")
        self.cameras = self.cfg.cameras()
        self.grid = WorkspaceGrid(self.cfg.workspace, self.cfg.grid_res())
        self.infer_steps = infer_steps
        self.task_index = TASKS.index(self.cfg.task.task_id)

    @classmethod
    def from_dir(cls, run_dir, infer_steps: int | None = None) -> "MVVideoPolicy":
        run_dir = Path(run_dir)
        return cls(run_dir / DIFFUSION_FINAL, run_dir / DECODER_FINAL, infer_steps=infer_steps)

    def plan(self, cloud, pose, rng_seed, state=None) -> ActionChunk:
        return self.plan_detailed(cloud, pose, rng_seed).chunk

    def plan_detailed(self, cloud, pose, rng_seed) -> PolicyRollout:
        cfg = self.cfg
        cams = self.cameras
        cropped = crop_workspace(cloud, cfg.workspace)
        frame = render_multiview(cropped, cams)
        cond_rgb = np.stack([v.rgb for v in frame.views])[:, None]  # (V, 1, H, W, 3)
        cond_maps = [render_heatmap(cam, pose.position, cfg.heatmap, t=0) for cam in cams]
        cond_heat = np.stack([m.values for m in cond_maps]).astype(np.float32)[:, None]

        heat_lat = encode(heat_video_to_rgb(cond_heat), cfg.codec).tensor
        rgb_lat = encode(cond_rgb, cfg.codec).tensor if cfg.diffusion.predict_rgb else None
        cond_latent = mvdiff.fuse_latents(rgb_lat, heat_lat, cfg.diffusion)

        latent = mvdiff.sample(
            self.model, cond_latent, rng_seed, infer_steps=self.infer_steps, task_id=self.task_index
        )
        rgb_pred_lat, heat_pred_lat = mvdiff.split_latents(
            latent, len(cams), cfg.codec.latent_channels, cfg.diffusion
        )
        heat_rgb = decode(LatentVideo(heat_pred_lat, cfg.codec))  # (V, 1+T, H, W, 3)
        n_views, n_frames = heat_rgb.shape[0], heat_rgb.shape[1]
        heat_video = np.zeros(heat_rgb.shape[:4], dtype=np.float32)
        future_maps = []
        for t in range(n_frames):
            row = [decolorize(heat_rgb[v, t], view_id=v, timestep=t) for v in range(n_views)]
            for v in range(n_views):
                heat_video[v, t] = row[v].values
            if t > 0:
                future_maps.append(row)

        positions, held = trajectory_from_heatmap_video(
            future_maps, cams, self.grid, initial_position=pose.position
        )
        peaks_px = self._peak_track(future_maps, pose)
        cells = peaks_to_cells(
            peaks_px, cfg.codec.spatial_factor, (self.model.geom.height, self.model.geom.width)
        )
        rot_logits, grip_logits = predict_rot_gripper(self.decoder, latent, cells)
        chunk = assemble_chunk(positions, rot_logits, grip_logits, pose, cfg.workspace, held=held)

        if rgb_pred_lat is not None:
            rgb_video = np.clip(decode(LatentVideo(rgb_pred_lat, cfg.codec)), 0.0, 1.0)
        else:
            rgb_video = heat_video_to_rgb(heat_video)
        return PolicyRollout(chunk=chunk, rgb_video=rgb_video, heat_video=heat_video, seed=int(rng_seed))

    def _peak_track(self, future_maps, pose) -> np.ndarray:
        """Per-frame per-view peak pixels; frames without a peak hold the last."""
        prev = []
        for cam in self.cameras:
            u, v, _ = project_point(cam, pose.position)
            prev.append(
                (
                    int(np.clip(round_half_away(u), 0, cam.width - 1)),
                    int(np.clip(round_half_away(v), 0, cam.height - 1)),
                )
            )
        track = np.zeros((len(future_maps), len(self.cameras), 2), dtype=np.int64)
        for t, row in enumerate(future_maps):
            for v, hm in enumerate(row):
                peak = argpeak(hm)
                if peak is not None:
                    prev[v] = (peak[0], peak[1])
                track[t, v] = prev[v]
        return track
