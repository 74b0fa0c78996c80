"""Gate server with a synthetic policy; no checkpoints required.

Lets the inspector UI be developed and integration-tested against the real
HTTP contract without training anything: chunks drift the end effector and
the preview videos show a dot moving across each view.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .action_decoder import ActionChunk
from .geometry import WorkspaceBox
from .policy import PolicyRollout
from .server import ServeSession
from .sim import SimConfig, TaskSpec


class SyntheticPolicy:
    """Deterministic per-seed chunks plus moving-dot preview videos."""

    def __init__(self, box: WorkspaceBox, chunk_length: int = 24, frames: int = 25, size: int = 64):
        self.box = box
        self.chunk_length = chunk_length
        self.frames = frames
        self.size = size

    def plan_detailed(self, cloud, pose, rng_seed, state=None):
        rng = np.random.default_rng(rng_seed)
        drift = rng.uniform(-0.008, 0.008, 3)
        positions = pose.position[None] + np.cumsum(np.tile(drift, (self.chunk_length, 1)), axis=0)
        positions = np.clip(positions, self.box.lo + 0.01, self.box.hi - 0.01)
        chunk = ActionChunk(
            positions=positions,
            euler_bins=np.full((self.chunk_length, 3), 36, dtype=np.int64),
            euler=np.zeros((self.chunk_length, 3)),
            gripper=(np.arange(self.chunk_length) % 2).astype(np.int64),
            clamped=np.zeros(self.chunk_length, dtype=bool),
        )
        s = self.size
        rgb = np.zeros((3, self.frames, s, s, 3), dtype=np.float32)
        heat = np.zeros((3, self.frames, s, s), dtype=np.float32)
        start = rng.integers(8, s - 8, size=(3, 2))
        for v in range(3):
            rgb[v, :, :, :, v % 3] = 0.15  # tint per view
            for t in range(self.frames):
                x = int(np.clip(start[v, 0] + t, 2, s - 3))
                y = int(start[v, 1])
                rgb[v, t, y - 2 : y + 3, x - 2 : x + 3] = 0.9
                heat[v, t, y, x] = 1.0
        return PolicyRollout(chunk=chunk, rgb_video=rgb, heat_video=heat, seed=int(rng_seed))

    def plan(self, cloud, pose, rng_seed, state=None):
        return self.plan_detailed(cloud, pose, rng_seed).chunk


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Synthetic gate server for UI development")
    parser.add_argument("--port", type=int, default=8710)
    parser.add_argument("--trials", type=int, default=10)
    parser.add_argument("--out", default="/tmp/mvpolicy-demo-serve")
    parser.add_argument("--gate", action=argparse.BooleanOptionalAction, default=True)
    parser.add_argument("--ui", default=None, help="directory with the built inspector UI")
    parser.add_argument("--decision-timeout", type=float, default=300.0)
    args = parser.parse_args(argv)

    box = WorkspaceBox((0.0, 0.0, 0.0), 0.48)
    session = ServeSession(
        SyntheticPolicy(box),
        TaskSpec("pick_place", horizon=240),
        SimConfig(box=box, n_points=2000),
        args.out,
        gate=args.gate,
        port=args.port,
        decision_timeout=args.decision_timeout,
        ui_dir=args.ui,
    )
    base = session.start_http()
    print(f"demo gate server at {base} (ui={'mounted' if args.ui else 'none'})", flush=True)
    try:
        session.run_trials(args.trials)
    except KeyboardInterrupt:
        pass
    finally:
        session.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
