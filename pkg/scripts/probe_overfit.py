"""Feasibility probe: overfit on fixed-init demos, then check replay + closed loop.

Not part of the test suite; used to tune the acceptance training config.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from mvpolicy.action_decoder import DecoderConfig
from mvpolicy.codec import CodecConfig
from mvpolicy.config import DemoSection, RunConfig, TrainSection
from mvpolicy.data import build_clip, read_episode
from mvpolicy.geometry import AugmentParams, WorkspaceBox, wrap_angle, dequantize_euler_delta
from mvpolicy.heatmap import HeatmapParams
from mvpolicy.mvdiff import DiffusionConfig
from mvpolicy.policy import MVVideoPolicy
from mvpolicy.sim import TaskSpec, evaluate, generate_demos
from mvpolicy.train import train_decoder, train_diffusion

ROOT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/probe")
STEPS = int(sys.argv[2]) if len(sys.argv) > 2 else 400
DEC_STEPS = int(sys.argv[3]) if len(sys.argv) > 3 else 300

cfg = RunConfig(
    seed=0,
    image_size=64,
    n_points=8000,
    workspace=WorkspaceBox((0.0, 0.0, 0.0), 0.48),
    heatmap=HeatmapParams(sigma=1.5, reference_size=64),
    codec=CodecConfig(spatial_factor=8, temporal_factor=4),
    diffusion=DiffusionConfig(blocks=3, heads=4, d_model=128),
    decoder=DecoderConfig(d_model=128, feat_channels=64),
    task=TaskSpec(task_id="pick_place", fixed_init=True),
    augment=AugmentParams(),
    demos=DemoSection(n=1, stride=2),
    train_diffusion=TrainSection(steps=STEPS, batch_size=3, ckpt_every=0, lr=float(sys.argv[4]) if len(sys.argv) > 4 else 1.0e-3),
    train_decoder=TrainSection(steps=DEC_STEPS, batch_size=3, weight_decay=1e-5, ckpt_every=0, lr=1.0e-3),
)

ROOT.mkdir(parents=True, exist_ok=True)
demos = ROOT / "demos"
if not list(demos.glob("*.mvep")):
    generate_demos(cfg.task, 1, 7, demos, cfg.sim_config(), cfg.cameras(), stride=2, tail_frames=24)
print("demos ready", flush=True)

t0 = time.time()
train_diffusion(cfg, demos, ROOT / "run")
print(f"diffusion trained in {(time.time()-t0)/60:.1f} min", flush=True)
t0 = time.time()
train_decoder(cfg, demos, ROOT / "run")
print(f"decoder trained in {(time.time()-t0)/60:.1f} min", flush=True)

recs = [json.loads(l) for l in open(ROOT / "run" / "metrics.jsonl")]
smooth = lambda rs, k: np.convolve([r for r in rs], np.ones(k) / k, mode="valid")
heat = [r["loss_heat"] for r in recs]
vid = [r["loss_vid"] for r in recs]
print(f"loss_heat first50 {np.mean(heat[:50]):.4f} last50 {np.mean(heat[-50:]):.4f}")
print(f"loss_vid  first50 {np.mean(vid[:50]):.4f} last50 {np.mean(vid[-50:]):.4f}", flush=True)

policy = MVVideoPolicy.from_dir(ROOT / "run")

# Replay check on training conditioning frames
ep = read_episode(sorted(demos.glob("*.mvep"))[0])
pos_errs, rot_errs, grip_ok = [], [], []
for start in range(0, ep.frame_count - 24, 4):
    clip = build_clip(ep, start, cfg.cameras(), cfg.heatmap, augment=None, chunk=24)
    cloud = ep.clouds[start]
    pose = ep.poses[start]
    chunk = policy.plan(cloud, pose, rng_seed=1234 + start)
    pos_errs.append(np.linalg.norm(chunk.positions - clip.target_positions, axis=1))
    gt_delta = np.stack([dequantize_euler_delta(b) for b in clip.target_euler_bins])
    pred_delta = np.stack([dequantize_euler_delta(b) for b in chunk.euler_bins])
    rot_errs.append(np.abs(wrap_angle(pred_delta - gt_delta)).max(axis=1))
    grip_ok.append(chunk.gripper == clip.target_gripper)
pos_errs = np.concatenate(pos_errs)
rot_errs = np.concatenate(rot_errs)
grip_ok = np.concatenate(grip_ok)
frame_ok = (pos_errs <= 0.008) & (rot_errs <= np.radians(2.5) + 1e-9) & grip_ok
print(f"replay: pos_err mean {pos_errs.mean()*1000:.1f}mm p95 {np.percentile(pos_errs,95)*1000:.1f}mm")
print(f"replay: rot exact-bin rate {np.mean(rot_errs <= np.radians(2.5)+1e-9):.3f} grip rate {grip_ok.mean():.3f}")
print(f"replay frame pass rate: {frame_ok.mean():.3f}", flush=True)

for n in (5, 1):
    t0 = time.time()
    res = evaluate(policy if n == 5 else MVVideoPolicy.from_dir(ROOT / "run", infer_steps=n),
                   cfg.task, 5, seed=99, sim_config=cfg.sim_config())
    print(f"closed-loop N={n}: {res.successes}/5 in {(time.time()-t0)/60:.1f} min", flush=True)
