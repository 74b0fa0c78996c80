"""Command-line surface: demo generation, training, evaluation, rollout serving,
rendering benchmark, metrics plotting, and frame export."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import build_clip, export_frames_png, read_episode
from .rasterizer import benchmark_render
from .seeding import derive_seed
from .sim import RandomPolicy, ExpertPolicy, TaskSpec, evaluate, generate_demos


def _load_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _task_from(cfg: RunConfig, name: str | None, fixed_init: bool | None = None) -> TaskSpec:
    task = cfg.task if name is None else dataclasses.replace(cfg.task, task_id=name)
    if fixed_init is not None:
        task = dataclasses.replace(task, fixed_init=fixed_init)
    return task


def cmd_gen_demos(args) -> int:
    cfg = _load_config(args.config)
    task = _task_from(cfg, args.task, args.fixed_init)
    out = Path(args.out)
    paths = generate_demos(
        task,
        args.n,
        args.seed,
        out,
        cfg.sim_config(),
        cfg.cameras(),
        stride=cfg.demos.stride,
        tail_frames=cfg.demos.tail_frames,
    )
    cfg.write_copy(out)
    for p in paths:
        ep = read_episode(p)
        print(f"wrote {p} ({ep.frame_count} frames, success_step={ep.extra.get('success_step')})")
    return 0


def _apply_ablations(cfg: RunConfig, args) -> RunConfig:
    diff = cfg.diffusion
    if getattr(args, "no_video_pred", False):
        diff = dataclasses.replace(diff, predict_rgb=False, lambda_rgb=0.0)
    if getattr(args, "channel_concat", False):
        diff = dataclasses.replace(diff, fuse_mode="channel_concat")
    return dataclasses.replace(cfg, diffusion=diff)


def cmd_train_diffusion(args) -> int:
    from .train import train_diffusion

    cfg = _apply_ablations(_load_config(args.config), args)
    final = train_diffusion(cfg, args.episodes, args.out, resume=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def cmd_train_decoder(args) -> int:
    from .train import train_decoder

    cfg = _apply_ablations(_load_config(args.config), args)
    final = train_decoder(cfg, args.episodes, args.out, resume=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def _build_policy(args, cfg: RunConfig, infer_steps: int | None):
    if args.policy == "random":
        return RandomPolicy(cfg.workspace, chunk_length=cfg.chunk_length)
    if args.policy == "expert":
        return ExpertPolicy(_task_from(cfg, args.task, args.fixed_init), chunk_length=cfg.chunk_length)
    from .policy import MVVideoPolicy

    return MVVideoPolicy.from_dir(args.checkpoints, infer_steps=infer_steps)


def cmd_eval(args) -> int:
    if args.policy == "model" and not args.checkpoints:
        print("--checkpoints is required for model evaluation", file=sys.stderr)
        return 2
    if args.checkpoints and args.policy == "model":
        from .train import load_diffusion, DIFFUSION_FINAL

        _, cfg = load_diffusion(Path(args.checkpoints) / DIFFUSION_FINAL)
    else:
        cfg = _load_config(args.config)
    task = _task_from(cfg, args.task, args.fixed_init)
    steps_list = [int(s) for s in str(args.steps).split(",") if s]
    out_dir = Path(args.out) if args.out else None
    rows = []
    for n_steps in steps_list:
        policy = _build_policy(args, cfg, infer_steps=n_steps)
        result = evaluate(policy, task, args.trials, args.seed, cfg.sim_config())
        rows.append(
            {
                "task": task.task_id,
                "steps": n_steps,
                "trials": result.trials,
                "successes": result.successes,
                "success_rate": result.success_rate,
                "per_trial": result.per_trial,
            }
        )
        print(
            f"task={task.task_id} N={n_steps} success={result.successes}/{result.trials} "
            f"({100 * result.success_rate:.1f}%)"
        )
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.write_copy(out_dir)
        with open(out_dir / "eval.json", "w") as f:
            json.dump({"seed": args.seed, "rows": rows}, f, indent=2, sort_keys=True)
        print(f"wrote {out_dir / 'eval.json'}")
    return 0


def cmd_serve(args) -> int:
    from .policy import MVVideoPolicy
    from .server import ServeSession

    policy = MVVideoPolicy.from_dir(args.checkpoints, infer_steps=args.steps)
    cfg = policy.cfg
    task = _task_from(cfg, args.task, args.fixed_init)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.write_copy(out_dir)
    session = ServeSession(
        policy,
        task,
        cfg.sim_config(),
        out_dir,
        gate=args.gate,
        seed=args.seed,
        port=args.port,
        decision_timeout=args.decision_timeout,
    )
    base = session.start_http()
    print(f"serving rollouts at {base} (gate={'on' if args.gate else 'off'})")
    try:
        result = session.run_trials(args.trials)
        with open(out_dir / "results.json", "w") as f:
            json.dump(
                {"successes": result.successes, "trials": result.trials, "per_trial": result.per_trial},
                f,
                indent=2,
                sort_keys=True,
            )
        print(f"success {result.successes}/{result.trials}; results in {out_dir}")
    finally:
        session.shutdown()
    return 0


def cmd_render_bench(args) -> int:
    cfg = _load_config(args.config)
    cams = cfg.cameras()
    for n_points in [int(s) for s in str(args.points).split(",") if s]:
        for threads in [int(s) for s in str(args.threads).split(",") if s]:
            stats = benchmark_render(n_points, cams, repeats=args.repeats, n_threads=threads)
            print(
                f"points={stats['points']:>9d} threads={stats['threads']} "
                f"ms/frame={stats['ms_per_frame']:8.2f} points/s={stats['points_per_sec']:.3e}"
            )
    return 0


def cmd_plot_metrics(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = []
    with open(args.log) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        print("metrics log is empty", file=sys.stderr)
        return 1
    steps = [r["step"] for r in records]
    keys = [k for k in records[0] if k != "step"]
    fig, ax = plt.subplots(figsize=(8, 5))
    for key in keys:
        ax.plot(steps, [r[key] for r in records], label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out)
    print(f"wrote {args.out} ({len(records)} records, series: {', '.join(keys)})")
    return 0


def cmd_export_frames(args) -> int:
    cfg = _load_config(args.config)
    ep = read_episode(args.episode)
    clip = build_clip(ep, args.start, cfg.cameras(), cfg.heatmap, augment=None, chunk=cfg.chunk_length)
    count = export_frames_png(clip.rgb, clip.heat, args.out)
    print(f"wrote {count} PNGs under {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvpolicy", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-demos", help="roll the scripted expert and save episodes")
    g.add_argument("--task", choices=["pick_place", "push_t"], default=None)
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config", default=None)
    g.add_argument("--fixed-init", action="store_true", default=None)
    g.set_defaults(func=cmd_gen_demos)

    for name, func in (("train-diffusion", cmd_train_diffusion), ("train-decoder", cmd_train_decoder)):
        t = sub.add_parser(name, help=f"{name.replace('-', ' ')} from episodes")
        t.add_argument("--config", required=True)
        t.add_argument("--episodes", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--resume", default=None)
        t.add_argument("--no-video-pred", action="store_true", help="heatmap-only ablation")
        t.add_argument("--channel-concat", action="store_true", help="channel-fusion ablation")
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="closed-loop evaluation; table per (task, N)")
    e.add_argument("--checkpoints", default=None, help="directory with diffusion.mvck + decoder.mvck")
    e.add_argument("--task", choices=["pick_place", "push_t"], default=None)
    e.add_argument("--trials", type=int, default=25)
    e.add_argument("--steps", default="5", help="comma list of denoise step counts, e.g. 1,5,50")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--policy", choices=["model", "random", "expert"], default="model")
    e.add_argument("--fixed-init", action="store_true", default=None)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="closed-loop evaluation behind the approval gate")
    s.add_argument("--checkpoints", required=True)
    s.add_argument("--task", choices=["pick_place", "push_t"], default=None)
    s.add_argument("--port", type=int, default=8710)
    s.add_argument("--gate", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--decision-timeout", type=float, default=300.0)
    s.add_argument("--out", required=True)
    s.add_argument("--fixed-init", action="store_true", default=None)
    s.set_defaults(func=cmd_serve)

    b = sub.add_parser("render-bench", help="rasterizer throughput probe")
    b.add_argument("--points", default="100000,1000000")
    b.add_argument("--threads", default="1,2")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--config", default=None)
    b.set_defaults(func=cmd_render_bench)

    m = sub.add_parser("plot-metrics", help="plot a metrics JSONL file")
    m.add_argument("--log", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_plot_metrics)

    x = sub.add_parser("export-frames", help="export a clip as rgb/heatmap/overlay PNGs")
    x.add_argument("--episode", required=True)
    x.add_argument("--start", type=int, default=0)
    x.add_argument("--out", required=True)
    x.add_argument("--config", default=None)
    x.set_defaults(func=cmd_export_frames)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
