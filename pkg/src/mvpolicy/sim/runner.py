"""Demonstration generation and closed-loop evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import Episode, write_episode
from ..geometry import PoseEE, quantize_euler_delta, wrap_angle
from ..seeding import derive_seed
from .expert import scripted_expert
from .world import SimConfig, TaskSpec, reset, step, success_of


class DemoGenerationError(RuntimeError):
    pass


def generate_demos(
    task: TaskSpec,
    n: int,
    seed: int,
    out_dir,
    sim_config: SimConfig,
    cameras,
    stride: int = 4,
    tail_frames: int = 24,
    max_attempts: int = 10,
    start_index: int = 0,
) -> list:
    """Roll the scripted expert and save ``n`` successful episodes.

    Frames (cloud, pose) are recorded every ``stride`` sim steps, then for
    ``tail_frames`` more recorded frames after success so late clip windows
    teach the policy to hold. Only successful rollouts are saved; generation
    is deterministic per (task, seed). ``start_index`` offsets the episode
    numbering so one directory can mix demo variants (e.g. one fixed-init
    demo plus randomized ones).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(start_index, start_index + n):
        episode = None
        for attempt in range(max_attempts):
            reset_seed = derive_seed(seed, task.task_id, "demo", i, attempt, task.fixed_init)
            episode = _roll_expert(task, reset_seed, sim_config, cameras, stride, tail_frames)
            if episode is not None:
                break
        if episode is None:
            raise DemoGenerationError(
                f"expert failed {max_attempts} attempts for demo {i} of task {task.task_id}"
            )
        path = out_dir / f"{task.task_id}_{i:03d}.mvep"
        write_episode(episode, path)
        paths.append(path)
    return paths


def _roll_expert(task, reset_seed, sim_config, cameras, stride, tail_frames):
    state, (cloud, pose) = reset(task, reset_seed, sim_config)
    clouds = [cloud]
    poses = [pose]
    success_step = None
    sim_step = 0
    while True:
        sim_step += 1
        action = scripted_expert(state, task)
        state, (cloud, pose), done, succ, info = step(state, action)
        if sim_step % stride == 0:
            clouds.append(cloud)
            poses.append(pose)
        if succ and success_step is None:
            success_step = sim_step
        if success_step is not None and sim_step >= success_step + tail_frames * stride:
            break
        if success_step is None and sim_step >= task.horizon:
            return None
    if not success_of(state) or len(clouds) < 25:
        return None
    return Episode(
        task_id=task.task_id,
        seed=reset_seed,
        stride=stride,
        cameras=list(cameras),
        workspace=sim_config.box,
        clouds=clouds,
        poses=poses,
        extra={
            "success_step": success_step,
            "horizon": task.horizon,
            "tolerance": task.tolerance,
            "fixed_init": task.fixed_init,
            "goal_position": state.goal_position.tolist(),
        },
    )


@dataclass
class EvalResult:
    task_id: str
    trials: int
    successes: int
    per_trial: list

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def evaluate(
    policy,
    task: TaskSpec,
    trials: int,
    seed: int,
    sim_config: SimConfig,
    on_chunk=None,
) -> EvalResult:
    """Closed loop: re-observe and re-plan every executed chunk.

    ``policy.plan(cloud, pose, rng_seed, state=...)`` returns an ActionChunk;
    fixed seeds fully determine every trial outcome. ``on_chunk`` (when set)
    is called with (trial, chunk_index, chunk) before each chunk executes and
    may veto execution by returning a replacement chunk or None to skip.
    """
    per_trial = []
    successes = 0
    for trial in range(trials):
        state, (cloud, pose) = reset(task, derive_seed(seed, "trial", trial), sim_config)
        succ = False
        steps = 0
        chunk_idx = 0
        while steps < task.horizon and not succ:
            plan_seed = derive_seed(seed, "plan", trial, chunk_idx)
            chunk = policy.plan(cloud, pose, plan_seed, state=state)
            if on_chunk is not None:
                chunk = on_chunk(trial, chunk_idx, chunk)
            chunk_idx += 1
            if chunk is None:
                break
            for k in range(chunk.length):
                state, (cloud, pose), done, succ, info = step(state, chunk.pose_at(k))
                steps += 1
                if succ or steps >= task.horizon:
                    break
        if succ:
            successes += 1
        per_trial.append({"trial": trial, "success": bool(succ), "steps": steps, "chunks": chunk_idx})
    return EvalResult(task_id=task.task_id, trials=trials, successes=successes, per_trial=per_trial)


class RandomPolicy:
    """Uniform random workspace targets; the evaluation floor."""

    def __init__(self, box, chunk_length: int = 24):
        self.box = box
        self.chunk_length = chunk_length

    def plan(self, cloud, pose, rng_seed, state=None):
        from ..action_decoder import ActionChunk

        rng = np.random.default_rng(rng_seed)
        margin = 0.01
        lo = self.box.lo + margin
        hi = self.box.hi - margin
        positions = rng.uniform(lo, hi, size=(self.chunk_length, 3))
        gripper = rng.integers(0, 2, size=self.chunk_length)
        euler = np.zeros((self.chunk_length, 3))
        return ActionChunk(
            positions=positions,
            euler_bins=np.full((self.chunk_length, 3), 36, dtype=np.int64),
            euler=euler,
            gripper=gripper.astype(np.int64),
            clamped=np.zeros(self.chunk_length, dtype=bool),
        )


class ExpertPolicy:
    """Privileged expert rolled forward on a state copy; debug/demo baseline."""

    def __init__(self, task: TaskSpec, chunk_length: int = 24):
        self.task = task
        self.chunk_length = chunk_length

    def plan(self, cloud, pose, rng_seed, state=None):
        from ..action_decoder import ActionChunk

        if state is None:
            raise ValueError("ExpertPolicy needs the privileged sim state")
        sim_state = state.copy()
        positions = np.zeros((self.chunk_length, 3))
        eulers = np.zeros((self.chunk_length, 3))
        gripper = np.zeros(self.chunk_length, dtype=np.int64)
        cond_euler = sim_state.ee_pose.euler.copy()
        for k in range(self.chunk_length):
            action = scripted_expert(sim_state, self.task)
            sim_state, _, done, succ, info = step(sim_state, action)
            positions[k] = action.position
            eulers[k] = action.euler
            gripper[k] = action.gripper
        bins = np.stack([quantize_euler_delta(wrap_angle(e - cond_euler)) for e in eulers])
        return ActionChunk(
            positions=positions,
            euler_bins=bins.astype(np.int64),
            euler=eulers,
            gripper=gripper,
            clamped=np.zeros(self.chunk_length, dtype=bool),
        )
