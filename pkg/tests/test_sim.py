import numpy as np
import pytest

from mvpolicy.geometry import PoseEE, WorkspaceBox, default_camera_rig
from mvpolicy.sim import (
    ExpertPolicy,
    RandomPolicy,
    SimConfig,
    TaskSpec,
    evaluate,
    generate_demos,
    observe,
    reset,
    scripted_expert,
    step,
    success_of,
)
from mvpolicy.sim.world import _Layout

BOX = WorkspaceBox((0.0, 0.0, 0.0), 0.48)
CFG = SimConfig(box=BOX, n_points=6000)


def rollout_expert(task, seed, config=CFG):
    state, obs = reset(task, seed, config)
    for _ in range(task.horizon):
        action = scripted_expert(state, task)
        state, obs, done, succ, info = step(state, action)
        if succ:
            return state, True
    return state, False


class TestReset:
    def test_deterministic(self):
        task = TaskSpec("pick_place")
        s1, (c1, p1) = reset(task, 42, CFG)
        s2, (c2, p2) = reset(task, 42, CFG)
        assert np.array_equal(c1.positions, c2.positions)
        assert np.array_equal(c1.colors, c2.colors)
        assert np.array_equal(p1.position, p2.position)
        assert np.array_equal(s1.object("cube").position, s2.object("cube").position)

    def test_pick_place_contract(self):
        state, _ = reset(TaskSpec("pick_place"), 0, CFG)
        graspable = [o for o in state.objects if o.graspable]
        targets = [o for o in state.objects if o.name == "pad"]
        assert len(graspable) == 1 and len(targets) == 1

    def test_spawns_within_regions(self):
        lay = _Layout(BOX)
        task = TaskSpec("pick_place")
        for seed in range(100):
            state, _ = reset(task, seed, CFG)
            cube = state.object("cube")
            pad = state.object("pad")
            assert np.all(np.abs(cube.position[:2] - lay.obj_spawn_center) <= lay.obj_spawn_extent + 1e-12)
            assert np.all(np.abs(pad.position[:2] - lay.goal_spawn_center) <= lay.goal_spawn_extent + 1e-12)

    def test_fixed_init_is_fixed(self):
        task = TaskSpec("pick_place", fixed_init=True)
        a, _ = reset(task, 1, CFG)
        b, _ = reset(task, 999, CFG)
        assert np.array_equal(a.object("cube").position, b.object("cube").position)
        assert a.object("cube").yaw == b.object("cube").yaw

    def test_observation_inside_workspace(self):
        state, (cloud, _) = reset(TaskSpec("push_t"), 3, CFG)
        assert np.all(BOX.contains(cloud.positions))


class TestStep:
    def test_displacement_cap(self):
        state, (_, pose) = reset(TaskSpec("pick_place"), 0, CFG)
        target = pose.position + np.array([0.10, 0.0, 0.0])
        st, _, _, _, _ = step(state, PoseEE(target, pose.euler, 0))
        moved = np.linalg.norm(st.ee_pose.position - pose.position)
        assert moved == pytest.approx(CFG.step_cap)

    def test_out_of_workspace_rejected(self):
        state, (_, pose) = reset(TaskSpec("pick_place"), 0, CFG)
        bad = PoseEE([1.0, 0.0, 0.0], pose.euler, 0)
        st, _, done, succ, info = step(state, bad)
        assert info["rejected"]
        assert st is state
        assert np.array_equal(st.ee_pose.position, pose.position)

    def test_noop_never_succeeds(self):
        task = TaskSpec("pick_place")
        for seed in range(10):
            state, (_, pose) = reset(task, seed, CFG)
            hold = PoseEE(pose.position.copy(), pose.euler.copy(), 0)
            for _ in range(30):
                state, _, done, succ, _ = step(state, hold)
                assert not succ

    def test_attached_object_tracks_ee(self):
        task = TaskSpec("pick_place", fixed_init=True)
        state, _ = reset(task, 0, CFG)
        cube = state.object("cube")
        # teleport-by-steps to the cube and grasp
        for _ in range(60):
            action = PoseEE(cube.position, [0, 0, 0], gripper=0)
            state, _, _, _, _ = step(state, action)
            if np.linalg.norm(state.ee_pose.position - cube.position) < 1e-6:
                break
        state, _, _, _, _ = step(state, PoseEE(cube.position, [0, 0, 0], gripper=1))
        assert state.attached == "cube"
        offset = state.object("cube").position - state.ee_pose.position
        lift = state.ee_pose.position + np.array([0.0, 0.0, 0.05])
        for _ in range(5):
            state, _, _, _, _ = step(state, PoseEE(lift, [0, 0, 0], gripper=1))
        assert np.allclose(state.object("cube").position - state.ee_pose.position, offset, atol=1e-12)

    def test_unattached_objects_move_only_by_push(self):
        task = TaskSpec("push_t", fixed_init=True)
        state, _ = reset(task, 0, CFG)
        tee_before = state.object("tee").position.copy()
        # hover far above: no contact, no motion
        high = PoseEE(state.ee_pose.position.copy(), [0, 0, 0], 0)
        for _ in range(10):
            state, _, _, _, _ = step(state, high)
        assert np.array_equal(state.object("tee").position, tee_before)


class TestExpert:
    @pytest.mark.parametrize("task_id", ["pick_place", "push_t"])
    def test_success_rate(self, task_id):
        task = TaskSpec(task_id)
        wins = sum(rollout_expert(task, seed)[1] for seed in range(100))
        assert wins >= 95

    def test_actions_within_cap(self):
        task = TaskSpec("pick_place")
        state, _ = reset(task, 5, CFG)
        for _ in range(task.horizon):
            action = scripted_expert(state, task)
            assert np.linalg.norm(action.position - state.ee_pose.position) <= CFG.step_cap + 1e-12
            state, _, _, succ, _ = step(state, action)
            if succ:
                break

    def test_open_loop_replay(self):
        task = TaskSpec("pick_place")
        state, _ = reset(task, 8, CFG)
        actions = []
        for _ in range(task.horizon):
            a = scripted_expert(state, task)
            actions.append(a)
            state, _, _, succ, _ = step(state, a)
            if succ:
                break
        assert succ
        # replay the recorded actions open loop from the same reset
        state2, _ = reset(task, 8, CFG)
        succ2 = False
        for a in actions:
            state2, _, _, succ2, _ = step(state2, a)
            if succ2:
                break
        assert succ2


class TestDemos:
    def test_generate_count_length_and_determinism(self, tmp_path, rig64):
        from mvpolicy.data import read_episode

        task = TaskSpec("pick_place")
        paths = generate_demos(task, 3, 11, tmp_path / "a", CFG, rig64, stride=2, tail_frames=24)
        assert len(paths) == 3
        for p in paths:
            ep = read_episode(p)
            assert ep.frame_count >= 25
            assert ep.extra["success_step"] is not None
        again = generate_demos(task, 3, 11, tmp_path / "b", CFG, rig64, stride=2, tail_frames=24)
        for a, b in zip(paths, again):
            assert a.read_bytes() == b.read_bytes()

    def test_final_frame_satisfies_predicate(self, tmp_path, rig64):
        from mvpolicy.data import read_episode
        from mvpolicy.seeding import derive_seed

        task = TaskSpec("pick_place")
        paths = generate_demos(task, 1, 13, tmp_path, CFG, rig64, stride=2, tail_frames=10)
        ep = read_episode(paths[0])
        # replay the recorded reset seed and run the expert to the same end
        state, _ = reset(task, ep.seed, CFG)
        for _ in range(ep.extra["success_step"] + 10 * ep.stride):
            state, _, _, _, _ = step(state, scripted_expert(state, task))
        assert success_of(state)


class TestEvaluate:
    def test_random_policy_baseline(self):
        task = TaskSpec("pick_place", horizon=60)
        res = evaluate(RandomPolicy(BOX), task, trials=5, seed=0, sim_config=CFG)
        assert res.trials == 5
        assert res.successes <= 1  # essentially never succeeds

    def test_expert_policy_rate(self):
        task = TaskSpec("pick_place")
        res = evaluate(ExpertPolicy(task), task, trials=25, seed=1, sim_config=CFG)
        assert res.successes >= 24

    def test_fixed_seeds_reproducible(self):
        task = TaskSpec("pick_place", horizon=80)
        a = evaluate(RandomPolicy(BOX), task, trials=4, seed=7, sim_config=CFG)
        b = evaluate(RandomPolicy(BOX), task, trials=4, seed=7, sim_config=CFG)
        assert a.per_trial == b.per_trial
