"""Run configuration: one YAML file fully specifies a reproducible run.

A serialized copy of the active config is written into every output
directory (training runs, eval tables, serve sessions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .action_decoder import DecoderConfig
from .codec import CodecConfig
from .geometry import AugmentParams, WorkspaceBox, default_camera_rig
from .heatmap import HeatmapParams
from .mvdiff import DiffusionConfig
from .sim import SimConfig, TaskSpec


@dataclass(frozen=True)
class TrainSection:
    steps: int = 1000
    batch_size: int = 4
    lr: float = 1.0e-4
    weight_decay: float = 0.0
    log_every: int = 1
    ckpt_every: int = 500


@dataclass(frozen=True)
class DemoSection:
    n: int = 5
    stride: int = 4
    tail_frames: int = 24
    dir: str = "demos"


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 0  # 0 keeps torch's default thread count
    image_size: int = 64
    margin_px: int = 3
    splat_radius: float | None = None  # None: one pixel's metric footprint
    chunk_length: int = 24
    grid_resolution: float | None = None  # None: cameras' meters_per_pixel
    n_points: int = 20000
    workspace: WorkspaceBox = field(default_factory=WorkspaceBox)
    heatmap: HeatmapParams = field(default_factory=HeatmapParams)
    codec: CodecConfig = field(default_factory=CodecConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    augment: AugmentParams | None = field(default_factory=AugmentParams)
    demos: DemoSection = field(default_factory=DemoSection)
    train_diffusion: TrainSection = field(default_factory=TrainSection)
    train_decoder: TrainSection = field(
        default_factory=lambda: TrainSection(weight_decay=1.0e-5)
    )

    def cameras(self):
        return default_camera_rig(
            self.workspace,
            image_size=self.image_size,
            margin_px=self.margin_px,
            splat_radius=self.splat_radius,
        )

    def sim_config(self) -> SimConfig:
        return SimConfig(box=self.workspace, n_points=self.n_points)

    def grid_res(self) -> float:
        if self.grid_resolution is not None:
            return self.grid_resolution
        return self.cameras()[0].meters_per_pixel

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "image_size": self.image_size,
            "margin_px": self.margin_px,
            "splat_radius": self.splat_radius,
            "chunk_length": self.chunk_length,
            "grid_resolution": self.grid_resolution,
            "n_points": self.n_points,
            "workspace": {"center": list(self.workspace.center), "edge_length": self.workspace.edge_length},
            "heatmap": asdict(self.heatmap),
            "codec": asdict(self.codec),
            "diffusion": asdict(self.diffusion),
            "decoder": asdict(self.decoder),
            "task": asdict(self.task),
            "augment": None if self.augment is None else {
                "max_translation": list(self.augment.max_translation),
                "max_yaw": self.augment.max_yaw,
            },
            "demos": asdict(self.demos),
            "train_diffusion": asdict(self.train_diffusion),
            "train_decoder": asdict(self.train_decoder),
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        cfg = RunConfig()
        ws = d.get("workspace", {})
        aug = d.get("augment", "unset")
        return RunConfig(
            seed=d.get("seed", cfg.seed),
            threads=d.get("threads", cfg.threads),
            image_size=d.get("image_size", cfg.image_size),
            margin_px=d.get("margin_px", cfg.margin_px),
            splat_radius=d.get("splat_radius", cfg.splat_radius),
            chunk_length=d.get("chunk_length", cfg.chunk_length),
            grid_resolution=d.get("grid_resolution", cfg.grid_resolution),
            n_points=d.get("n_points", cfg.n_points),
            workspace=WorkspaceBox(tuple(ws.get("center", (0.0, 0.0, 0.0))), ws.get("edge_length", 1.0)),
            heatmap=HeatmapParams(**d.get("heatmap", {})),
            codec=CodecConfig(**d.get("codec", {})),
            diffusion=DiffusionConfig(**d.get("diffusion", {})),
            decoder=DecoderConfig(**d.get("decoder", {})),
            task=TaskSpec(**d.get("task", {})),
            augment=(
                cfg.augment
                if aug == "unset"
                else None
                if aug is None
                else AugmentParams(tuple(aug["max_translation"]), aug["max_yaw"])
            ),
            demos=DemoSection(**d.get("demos", {})),
            train_diffusion=TrainSection(**d.get("train_diffusion", {})),
            train_decoder=TrainSection(**d.get("train_decoder", {})),
        )

    @staticmethod
    def load(path) -> "RunConfig":
        with open(path) as f:
            return RunConfig.from_dict(yaml.safe_load(f) or {})

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    def write_copy(self, out_dir) -> Path:
        """Drop the exact config into an output directory."""
        out = Path(out_dir) / "run_config.yaml"
        self.save(out)
        return out
