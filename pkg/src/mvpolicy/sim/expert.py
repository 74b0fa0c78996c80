"""Scripted waypoint experts, one per task.

Each expert is a pure function of the current state: approach, grasp or
contact, transport or push, release. Emitted targets always respect the
per-step displacement cap and stay inside the workspace, so replaying the
same actions from the same reset reproduces the episode exactly.
"""

from __future__ import annotations

import math

import numpy as np

from ..geometry import PoseEE, wrap_angle
from .world import SimState, TaskSpec, _Layout

_XY_TOL = 0.004
_Z_TOL = 0.003
_YAW_RATE = 0.12  # rad per step


def _capped(current: np.ndarray, target: np.ndarray, cap: float) -> np.ndarray:
    delta = target - current
    dist = float(np.linalg.norm(delta))
    if dist > cap:
        delta = delta * (cap / dist)
    return current + delta


def _toward_yaw(current: float, target: float) -> float:
    return wrap_angle(current + float(np.clip(wrap_angle(target - current), -_YAW_RATE, _YAW_RATE)))


def scripted_expert(state: SimState, task: TaskSpec) -> PoseEE:
    if task.task_id == "pick_place":
        return _pick_place_expert(state)
    return _push_expert(state)


def _pick_place_expert(state: SimState) -> PoseEE:
    cfg = state.config
    lay = _Layout(cfg.box)
    ee = state.ee_pose
    cube = state.object("cube")
    place = state.goal_position
    cap = cfg.step_cap * 0.98  # stay strictly under the env cap

    if state.attached is not None:
        yaw = ee.euler[2]
        over_goal = np.linalg.norm(ee.position[:2] - place[:2]) <= _XY_TOL
        if not over_goal:
            target = np.array([place[0], place[1], lay.carry_z])
            if ee.position[2] < lay.carry_z - _Z_TOL and np.linalg.norm(ee.position[:2] - place[:2]) > 0.03:
                target = np.array([ee.position[0], ee.position[1], lay.carry_z])
            return PoseEE(_capped(ee.position, target, cap), [0.0, 0.0, yaw], gripper=1)
        if ee.position[2] > place[2] + _Z_TOL:
            target = np.array([place[0], place[1], place[2]])
            return PoseEE(_capped(ee.position, target, cap), [0.0, 0.0, yaw], gripper=1)
        return PoseEE(ee.position.copy(), [0.0, 0.0, yaw], gripper=0)  # release

    placed = np.linalg.norm(cube.position - place) <= state.task.tolerance
    if placed:
        hover = np.array([ee.position[0], ee.position[1], lay.hover_z])
        return PoseEE(_capped(ee.position, hover, cap), ee.euler.copy(), gripper=0)

    grasp = cube.position
    yaw = _toward_yaw(ee.euler[2], cube.yaw)
    if np.linalg.norm(ee.position[:2] - grasp[:2]) > _XY_TOL:
        target = np.array([grasp[0], grasp[1], lay.hover_z])
        return PoseEE(_capped(ee.position, target, cap), [0.0, 0.0, yaw], gripper=0)
    if ee.position[2] > grasp[2] + _Z_TOL:
        return PoseEE(_capped(ee.position, grasp, cap), [0.0, 0.0, yaw], gripper=0)
    return PoseEE(ee.position.copy(), [0.0, 0.0, yaw], gripper=1)  # close


def _push_expert(state: SimState) -> PoseEE:
    cfg = state.config
    lay = _Layout(cfg.box)
    ee = state.ee_pose
    tee = state.object("tee")
    goal = state.goal_position
    cap = cfg.step_cap * 0.98
    push_z = tee.position[2]
    reach = cfg.ee_radius + tee.radius

    gap = goal[:2] - tee.position[:2]
    dist_goal = float(np.linalg.norm(gap))
    if dist_goal <= state.task.tolerance * 0.6:
        hover = np.array([ee.position[0], ee.position[1], lay.hover_z])
        return PoseEE(_capped(ee.position, hover, cap), ee.euler.copy(), gripper=0)

    push_dir = gap / dist_goal
    contact_xy = tee.position[:2] - push_dir * (reach - 0.001)
    behind = float(np.dot(tee.position[:2] - ee.position[:2], push_dir))
    lateral = float(np.linalg.norm(ee.position[:2] - (tee.position[:2] - push_dir * behind)))
    at_depth = abs(ee.position[2] - push_z) <= _Z_TOL

    if at_depth and 0.0 < behind <= reach + 0.015 and lateral <= 0.01:
        advance = ee.position[:2] + push_dir * cap
        target = np.array([advance[0], advance[1], push_z])
        return PoseEE(_capped(ee.position, target, cap), np.zeros(3), gripper=0)
    if np.linalg.norm(ee.position[:2] - contact_xy) <= _XY_TOL and not at_depth:
        target = np.array([contact_xy[0], contact_xy[1], push_z])
        return PoseEE(_capped(ee.position, target, cap), np.zeros(3), gripper=0)
    travel_z = lay.hover_z if np.linalg.norm(ee.position[:2] - contact_xy) > 0.02 else push_z
    target = np.array([contact_xy[0], contact_xy[1], travel_z])
    return PoseEE(_capped(ee.position, target, cap), np.zeros(3), gripper=0)
