"""Training loops for the diffusion transformer and the rotation/gripper decoder.

Every stochastic choice (batch sampling, augmentation, diffusion timesteps,
noise) is seeded per step from the run's master seed, so resuming from a
checkpoint that carries the optimizer state reproduces subsequent losses
bit-for-bit under a fixed thread count.

Metrics are line-delimited JSON records, one per logged step.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import action_decoder as adec
from . import mvdiff
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import encode
from .config import RunConfig
from .data import build_clip, heat_video_to_rgb, read_episode
from .mvdiff import LatentGeometry, ViewAttentiveDiT, fuse_latents
from .seeding import derive_seed
from .sim.world import TASKS

DIFFUSION_FINAL = "diffusion.mvck"
DECODER_FINAL = "decoder.mvck"


def latent_geometry(cfg: RunConfig) -> LatentGeometry:
    s = cfg.codec.spatial_factor
    return LatentGeometry(
        n_cameras=3,
        latent_frames=cfg.codec.latent_frames(1 + cfg.chunk_length),
        height=cfg.image_size // s,
        width=cfg.image_size // s,
        channels=cfg.codec.latent_channels,
    )


def load_episodes(episodes_dir) -> list:
    paths = sorted(Path(episodes_dir).glob("*.mvep"))
    if not paths:
        raise FileNotFoundError(f"no .mvep episodes under {episodes_dir}")
    return [read_episode(p) for p in paths]


def clip_index(episodes, chunk: int) -> list:
    index = []
    for e_idx, ep in enumerate(episodes):
        for start in range(ep.frame_count - chunk):
            index.append((e_idx, start))
    if not index:
        raise ValueError("episodes too short for the configured chunk length")
    return index


def clip_latents(clip, cfg: RunConfig) -> np.ndarray:
    """Fused pixel-space latents (V_eff, L, h, w, C_in) for one clip."""
    heat_lat = encode(heat_video_to_rgb(clip.heat), cfg.codec).tensor
    rgb_lat = encode(clip.rgb, cfg.codec).tensor if cfg.diffusion.predict_rgb else None
    return fuse_latents(rgb_lat, heat_lat, cfg.diffusion)


def peaks_to_cells(peaks_px: np.ndarray, spatial_factor: int, grid_hw) -> np.ndarray:
    cells = np.round(peaks_px / spatial_factor).astype(np.int64)
    cells[..., 0] = np.clip(cells[..., 0], 0, grid_hw[1] - 1)
    cells[..., 1] = np.clip(cells[..., 1], 0, grid_hw[0] - 1)
    return cells


def _sample_batch(cfg: RunConfig, episodes, index, cameras, step: int, with_targets: bool):
    rng = np.random.default_rng(derive_seed(cfg.seed, "batch", step))
    batch = cfg.train_diffusion.batch_size if not with_targets else cfg.train_decoder.batch_size
    picks = rng.integers(0, len(index), size=batch)
    latents, task_ids, peaks, bins, grips = [], [], [], [], []
    geom = latent_geometry(cfg)
    for j, pick in enumerate(picks):
        e_idx, start = index[int(pick)]
        ep = episodes[e_idx]
        aug_seed = int(rng.integers(0, 2**62)) if cfg.augment is not None else 0
        clip = build_clip(
            ep,
            start,
            cameras,
            cfg.heatmap,
            augment=cfg.augment,
            augment_seed=aug_seed,
            chunk=cfg.chunk_length,
        )
        latents.append(clip_latents(clip, cfg))
        task_ids.append(TASKS.index(ep.task_id))
        if with_targets:
            cells = peaks_to_cells(clip.peaks[1:], cfg.codec.spatial_factor, (geom.height, geom.width))
            peaks.append(cells)
            bins.append(clip.target_euler_bins)
            grips.append(clip.target_gripper)
    out = {
        "latents": torch.from_numpy(np.stack(latents).astype(np.float32)),
        "task_ids": torch.tensor(task_ids, dtype=torch.long),
    }
    if with_targets:
        out["peaks"] = torch.from_numpy(np.stack(peaks))
        out["bins"] = torch.from_numpy(np.stack(bins))
        out["grips"] = torch.from_numpy(np.stack(grips))
    return out


def _model_tensors(model: torch.nn.Module) -> dict:
    return {f"model.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def _load_model_tensors(model: torch.nn.Module, tensors: dict) -> None:
    state = {
        k[len("model.") :]: torch.from_numpy(np.ascontiguousarray(v))
        for k, v in tensors.items()
        if k.startswith("model.")
    }
    model.load_state_dict(state)


def _optimizer_tensors(opt: torch.optim.Optimizer) -> tuple:
    sd = opt.state_dict()
    tensors = {}
    for pid, st in sd["state"].items():
        for name, val in st.items():
            tensors[f"opt.{pid}.{name}"] = val.detach().cpu().numpy()
    groups = [{k: v for k, v in g.items() if k != "params"} | {"params": g["params"]} for g in sd["param_groups"]]
    return tensors, groups


def _load_optimizer_tensors(opt: torch.optim.Optimizer, tensors: dict, groups) -> None:
    state = {}
    for key, val in tensors.items():
        if not key.startswith("opt."):
            continue
        _, pid, name = key.split(".", 2)
        state.setdefault(int(pid), {})[name] = torch.from_numpy(np.ascontiguousarray(val))
    opt.load_state_dict({"state": state, "param_groups": groups})


class _MetricsLog:
    def __init__(self, path, resume: bool):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "a" if resume else "w")

    def write(self, record: dict) -> None:
        self._f.write(json.dumps(record, sort_keys=True) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()


def _apply_threads(cfg: RunConfig) -> None:
    if cfg.threads > 0:
        torch.set_num_threads(cfg.threads)


def _save(path, kind, step, cfg: RunConfig, model, opt) -> None:
    tensors = _model_tensors(model)
    opt_tensors, groups = _optimizer_tensors(opt)
    tensors.update(opt_tensors)
    save_checkpoint(
        path,
        kind=kind,
        step=step,
        configs={"run": cfg.to_dict(), "geometry": asdict(latent_geometry(cfg))},
        tensors=tensors,
        extra={"param_groups": groups},
    )


def train_diffusion(cfg: RunConfig, episodes_dir, out_dir, resume=None) -> Path:
    """Train the multi-view video diffusion transformer; returns the final
    checkpoint path. ``resume`` continues bit-for-bit from a saved step."""
    _apply_threads(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write_copy(out_dir)
    episodes = load_episodes(episodes_dir)
    index = clip_index(episodes, cfg.chunk_length)
    cameras = cfg.cameras()
    geom = latent_geometry(cfg)

    torch.manual_seed(derive_seed(cfg.seed, "diff-init"))
    model = ViewAttentiveDiT(cfg.diffusion, geom)
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.train_diffusion.lr, weight_decay=cfg.train_diffusion.weight_decay
    )
    start_step = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.kind != "diffusion":
            raise ValueError(f"cannot resume diffusion training from a {ck.kind!r} checkpoint")
        _load_model_tensors(model, ck.tensors)
        _load_optimizer_tensors(opt, ck.tensors, ck.extra["param_groups"])
        start_step = ck.step

    log = _MetricsLog(out_dir / "metrics.jsonl", resume=resume is not None)
    try:
        for step in range(start_step, cfg.train_diffusion.steps):
            batch = _sample_batch(cfg, episodes, index, cameras, step, with_targets=False)
            gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "diff-step", step))
            stats = mvdiff.training_step(model, opt, batch["latents"], gen, batch["task_ids"])
            if (step + 1) % cfg.train_diffusion.log_every == 0:
                log.write(
                    {
                        "step": step + 1,
                        "loss_total": stats.loss_total,
                        "loss_vid": stats.loss_vid,
                        "loss_heat": stats.loss_heat,
                    }
                )
            if cfg.train_diffusion.ckpt_every and (step + 1) % cfg.train_diffusion.ckpt_every == 0:
                _save(out_dir / f"diffusion_step{step + 1}.mvck", "diffusion", step + 1, cfg, model, opt)
    finally:
        log.close()
    final = out_dir / DIFFUSION_FINAL
    _save(final, "diffusion", cfg.train_diffusion.steps, cfg, model, opt)
    return final


def train_decoder(cfg: RunConfig, episodes_dir, out_dir, resume=None) -> Path:
    """Train the rotation & gripper predictor on ground-truth latents."""
    _apply_threads(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write_copy(out_dir)
    episodes = load_episodes(episodes_dir)
    index = clip_index(episodes, cfg.chunk_length)
    cameras = cfg.cameras()
    geom = latent_geometry(cfg)

    torch.manual_seed(derive_seed(cfg.seed, "dec-init"))
    model = adec.RotGripperPredictor(cfg.decoder, geom, cfg.diffusion, cfg.codec.temporal_factor)
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.train_decoder.lr, weight_decay=cfg.train_decoder.weight_decay
    )
    start_step = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.kind != "decoder":
            raise ValueError(f"cannot resume decoder training from a {ck.kind!r} checkpoint")
        _load_model_tensors(model, ck.tensors)
        _load_optimizer_tensors(opt, ck.tensors, ck.extra["param_groups"])
        start_step = ck.step

    log = _MetricsLog(out_dir / "decoder_metrics.jsonl", resume=resume is not None)
    try:
        for step in range(start_step, cfg.train_decoder.steps):
            batch = _sample_batch(cfg, episodes, index, cameras, step, with_targets=True)
            gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "dec-step", step))
            stats = adec.decoder_training_step(
                model, opt, batch["latents"], batch["peaks"], batch["bins"], batch["grips"], gen
            )
            if (step + 1) % cfg.train_decoder.log_every == 0:
                log.write(
                    {
                        "step": step + 1,
                        "loss_roll": stats.loss_roll,
                        "loss_pitch": stats.loss_pitch,
                        "loss_yaw": stats.loss_yaw,
                        "loss_gripper": stats.loss_gripper,
                        "loss_pred": stats.loss_pred,
                    }
                )
            if cfg.train_decoder.ckpt_every and (step + 1) % cfg.train_decoder.ckpt_every == 0:
                _save(out_dir / f"decoder_step{step + 1}.mvck", "decoder", step + 1, cfg, model, opt)
    finally:
        log.close()
    final = out_dir / DECODER_FINAL
    _save(final, "decoder", cfg.train_decoder.steps, cfg, model, opt)
    return final


def load_diffusion(path):
    """Rebuild (model, RunConfig) from a diffusion checkpoint."""
    ck = load_checkpoint(path)
    if ck.kind != "diffusion":
        raise ValueError(f"{path} is a {ck.kind!r} checkpoint, expected diffusion")
    cfg = RunConfig.from_dict(ck.configs["run"])
    model = ViewAttentiveDiT(cfg.diffusion, LatentGeometry(**ck.configs["geometry"]))
    _load_model_tensors(model, ck.tensors)
    model.eval()
    return model, cfg


def load_decoder(path):
    ck = load_checkpoint(path)
    if ck.kind != "decoder":
        raise ValueError(f"{path} is a {ck.kind!r} checkpoint, expected decoder")
    cfg = RunConfig.from_dict(ck.configs["run"])
    model = adec.RotGripperPredictor(
        cfg.decoder, LatentGeometry(**ck.configs["geometry"]), cfg.diffusion, cfg.codec.temporal_factor
    )
    _load_model_tensors(model, ck.tensors)
    model.eval()
    return model, cfg
