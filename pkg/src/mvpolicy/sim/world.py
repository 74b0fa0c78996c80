"""Deterministic kinematic tabletop world.

No dynamics engine: the end effector teleports toward its target under a
per-step displacement cap, grasping attaches an object rigidly to the ee,
releasing drops it onto the table, and pushable objects are displaced by
hard overlap resolution against the ee disc. Observations are colored point
clouds surface-sampled once per reset (object-local patterns, seeded) and
re-posed every step, so a whole episode is a pure function of the reset seed
and the action sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import (
    ColoredPointCloud,
    PoseEE,
    WorkspaceBox,
    crop_workspace,
    euler_to_matrix,
    wrap_angle,
)

TASKS = ("pick_place", "push_t")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str = "pick_place"
    horizon: int = 240
    tolerance: float = 0.05
    fixed_init: bool = False

    def __post_init__(self):
        if self.task_id not in TASKS:
            raise ValueError(f"unknown task {self.task_id!r}; expected one of {TASKS}")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class SimConfig:
    box: WorkspaceBox = WorkspaceBox((0.0, 0.0, 0.0), 0.48)
    n_points: int = 20000
    step_cap: float = 0.02
    attach_radius: float = 0.015
    ee_radius: float = 0.012
    color_jitter: int = 18  # per-point shade jitter, 8-bit steps


class _Layout:
    """Scene layout scaled to the workspace edge length."""

    def __init__(self, box: WorkspaceBox):
        e = box.edge_length
        cx, cy, cz = box.center
        self.center = np.array([cx, cy, cz])
        self.table_z = cz - 0.375 * e
        self.table_half = 0.48 * e
        self.cube_size = 0.092 * e
        self.pad_size = 0.19 * e
        self.pad_height = 0.012 * e
        self.tee_bar = (0.16 * e, 0.05 * e, 0.06 * e)
        self.tee_stem = (0.05 * e, 0.11 * e, 0.06 * e)
        self.obj_spawn_center = np.array([cx - 0.146 * e, cy - 0.146 * e])
        self.obj_spawn_extent = 0.104 * e
        self.goal_spawn_center = np.array([cx + 0.167 * e, cy + 0.167 * e])
        self.goal_spawn_extent = 0.073 * e
        self.hover_z = self.table_z + 0.333 * e
        self.carry_z = self.table_z + 0.25 * e
        self.push_spawn_center = np.array([cx - 0.104 * e, cy])
        self.push_spawn_extent = 0.083 * e
        self.push_goal_center = np.array([cx + 0.188 * e, cy])
        self.push_goal_extent = 0.062 * e
        self.ee_start = np.array([cx, cy, self.hover_z])


@dataclass
class ObjectState:
    name: str
    shape: str  # "box" | "tee" | "pad"
    size: tuple
    position: np.ndarray  # (3,) center
    yaw: float
    color: np.ndarray  # (3,) float in u8 lattice
    graspable: bool = False
    pushable: bool = False
    movable: bool = False
    radius: float = 0.0  # horizontal bounding radius for push contact
    local_points: np.ndarray | None = None  # (n, 3) sampled at reset
    local_shades: np.ndarray | None = None  # (n,) color jitter

    def copy(self) -> "ObjectState":
        return replace(
            self,
            position=self.position.copy(),
            color=self.color.copy(),
            local_points=self.local_points,
            local_shades=self.local_shades,
        )


@dataclass
class SimState:
    task: TaskSpec
    config: SimConfig
    seed: int
    ee_pose: PoseEE
    objects: list
    goal_position: np.ndarray  # target object/region center
    step_count: int = 0
    attached: str | None = None
    attach_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ee_points: np.ndarray | None = None  # finger-local unit pattern
    ee_shades: np.ndarray | None = None
    table_points: np.ndarray | None = None
    table_shades: np.ndarray | None = None

    def object(self, name: str) -> ObjectState:
        for obj in self.objects:
            if obj.name == name:
                return obj
        raise KeyError(name)

    def copy(self) -> "SimState":
        st = replace(
            self,
            ee_pose=self.ee_pose.copy(),
            objects=[o.copy() for o in self.objects],
            goal_position=self.goal_position.copy(),
            attach_offset=self.attach_offset.copy(),
        )
        return st


def _u8(color) -> np.ndarray:
    return np.round(np.asarray(color, dtype=np.float64) * 255.0) / 255.0


PALETTE = {
    "table": _u8((0.52, 0.52, 0.55)),
    "cube": _u8((0.85, 0.15, 0.12)),
    "pad": _u8((0.10, 0.35, 0.85)),
    "tee": _u8((0.10, 0.65, 0.20)),
    "goal": _u8((0.55, 0.25, 0.75)),
    "ee": _u8((0.95, 0.85, 0.10)),
}


def _sample_box_surface(size, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on the surface of an axis-aligned box centered at 0."""
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.zeros((n, 3))
    for f in range(6):
        m = faces == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[m, axis] = sign * 0.5 * (sx, sy, sz)[axis]
        pts[m, others[0]] = uv[m, 0] * (sx, sy, sz)[others[0]]
        pts[m, others[1]] = uv[m, 1] * (sx, sy, sz)[others[1]]
    return pts


def _sample_tee(bar, stem, n: int, rng: np.random.Generator) -> np.ndarray:
    """T-shaped block: top bar plus stem hanging in -y, both box surfaces."""
    bar_area = 2 * (bar[0] * bar[1] + bar[1] * bar[2] + bar[0] * bar[2])
    stem_area = 2 * (stem[0] * stem[1] + stem[1] * stem[2] + stem[0] * stem[2])
    n_bar = int(round(n * bar_area / (bar_area + stem_area)))
    pts_bar = _sample_box_surface(bar, n_bar, rng) + np.array([0.0, stem[1] / 2, 0.0])
    pts_stem = _sample_box_surface(stem, n - n_bar, rng) + np.array([0.0, -bar[1] / 2, 0.0])
    return np.concatenate([pts_bar, pts_stem], axis=0)


def _finger_pattern(n: int, rng: np.random.Generator) -> np.ndarray:
    """Gripper marker in its local frame: two fingers plus a crossbar.

    Finger x positions are stored as +-1 and scaled by the live half
    separation, so open/close only moves the fingers apart.
    """
    n_f = n // 3
    left = _sample_box_surface((0.008, 0.008, 0.036), n_f, rng)
    right = _sample_box_surface((0.008, 0.008, 0.036), n_f, rng)
    bar = _sample_box_surface((0.05, 0.01, 0.01), n - 2 * n_f, rng) + np.array([0.0, 0.0, 0.023])
    pts = np.concatenate([left, right, bar], axis=0)
    sides = np.concatenate([np.full(n_f, -1.0), np.full(n_f, 1.0), np.zeros(n - 2 * n_f)])
    return np.concatenate([pts, sides[:, None]], axis=1)  # (n, 4): xyz + finger side


def _shades(n: int, rng: np.random.Generator, jitter: int) -> np.ndarray:
    return rng.integers(-jitter, jitter + 1, size=n).astype(np.float64) / 255.0


def _spawn_xy(rng: np.random.Generator, center, extent: float, fixed: bool) -> np.ndarray:
    if fixed or extent <= 0:
        return np.asarray(center, dtype=np.float64).copy()
    return np.asarray(center) + rng.uniform(-extent, extent, size=2)


def reset(task: TaskSpec, seed: int, config: SimConfig | None = None):
    """Seeded scene randomization; returns (state, (cloud, pose)) deterministically."""
    config = config or SimConfig()
    lay = _Layout(config.box)
    rng = np.random.default_rng(seed)
    n = config.n_points
    counts = {
        "table": int(n * 0.42),
        "obj": int(n * 0.20),
        "goal": int(n * 0.14),
        "ee": n - int(n * 0.42) - int(n * 0.20) - int(n * 0.14),
    }

    objects = []
    if task.task_id == "pick_place":
        obj_xy = _spawn_xy(rng, lay.obj_spawn_center, lay.obj_spawn_extent, task.fixed_init)
        obj_yaw = 0.0 if task.fixed_init else float(rng.uniform(-math.radians(40), math.radians(40)))
        pad_xy = _spawn_xy(rng, lay.goal_spawn_center, lay.goal_spawn_extent, task.fixed_init)
        cube = ObjectState(
            name="cube",
            shape="box",
            size=(lay.cube_size,) * 3,
            position=np.array([obj_xy[0], obj_xy[1], lay.table_z + lay.cube_size / 2]),
            yaw=obj_yaw,
            color=PALETTE["cube"],
            graspable=True,
            movable=True,
            radius=lay.cube_size * 0.75,
            local_points=_sample_box_surface((lay.cube_size,) * 3, counts["obj"], rng),
            local_shades=_shades(counts["obj"], rng, config.color_jitter),
        )
        pad = ObjectState(
            name="pad",
            shape="pad",
            size=(lay.pad_size, lay.pad_size, lay.pad_height),
            position=np.array([pad_xy[0], pad_xy[1], lay.table_z + lay.pad_height / 2]),
            yaw=0.0,
            color=PALETTE["pad"],
            radius=lay.pad_size / 2,
            local_points=_sample_box_surface((lay.pad_size, lay.pad_size, lay.pad_height), counts["goal"], rng),
            local_shades=_shades(counts["goal"], rng, config.color_jitter),
        )
        objects = [cube, pad]
        goal = pad.position + np.array([0.0, 0.0, lay.pad_height / 2 + lay.cube_size / 2])
    else:  # push_t
        blk_xy = _spawn_xy(rng, lay.push_spawn_center, lay.push_spawn_extent, task.fixed_init)
        goal_xy = _spawn_xy(rng, lay.push_goal_center, lay.push_goal_extent, task.fixed_init)
        tee = ObjectState(
            name="tee",
            shape="tee",
            size=lay.tee_bar,
            position=np.array([blk_xy[0], blk_xy[1], lay.table_z + lay.tee_bar[2] / 2]),
            yaw=0.0,
            color=PALETTE["tee"],
            pushable=True,
            movable=True,
            radius=lay.tee_bar[0] * 0.62,
            local_points=_sample_tee(lay.tee_bar, lay.tee_stem, counts["obj"], rng),
            local_shades=_shades(counts["obj"], rng, config.color_jitter),
        )
        goal_marker = ObjectState(
            name="goal",
            shape="pad",
            size=(lay.pad_size, lay.pad_size, lay.pad_height),
            position=np.array([goal_xy[0], goal_xy[1], lay.table_z + lay.pad_height / 2]),
            yaw=0.0,
            color=PALETTE["goal"],
            radius=lay.pad_size / 2,
            local_points=_sample_box_surface((lay.pad_size, lay.pad_size, lay.pad_height), counts["goal"], rng),
            local_shades=_shades(counts["goal"], rng, config.color_jitter),
        )
        objects = [tee, goal_marker]
        goal = np.array([goal_xy[0], goal_xy[1], lay.table_z + lay.tee_bar[2] / 2])

    table_pts = np.zeros((counts["table"], 3))
    table_pts[:, 0] = rng.uniform(-lay.table_half, lay.table_half, size=counts["table"]) + lay.center[0]
    table_pts[:, 1] = rng.uniform(-lay.table_half, lay.table_half, size=counts["table"]) + lay.center[1]
    table_pts[:, 2] = lay.table_z

    state = SimState(
        task=task,
        config=config,
        seed=seed,
        ee_pose=PoseEE(lay.ee_start.copy(), np.zeros(3), gripper=0),
        objects=objects,
        goal_position=goal,
        ee_points=_finger_pattern(counts["ee"], rng),
        ee_shades=_shades(counts["ee"], rng, config.color_jitter),
        table_points=table_pts,
        table_shades=_shades(counts["table"], rng, config.color_jitter),
    )
    return state, observe(state)


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def observe(state: SimState):
    """Point-cloud observation plus the current ee pose, cropped to the box."""
    cfg = state.config
    clouds = []
    shade = state.table_shades[:, None]
    clouds.append((state.table_points, PALETTE["table"][None, :] + shade))
    for obj in state.objects:
        world = obj.local_points @ _yaw_matrix(obj.yaw).T + obj.position
        clouds.append((world, obj.color[None, :] + obj.local_shades[:, None]))

    pose = state.ee_pose
    half_sep = 0.015 if pose.gripper == 0 else 0.006
    local = state.ee_points[:, :3].copy()
    local[:, 0] += state.ee_points[:, 3] * half_sep
    world_ee = local @ euler_to_matrix(pose.euler).T + pose.position
    clouds.append((world_ee, PALETTE["ee"][None, :] + state.ee_shades[:, None]))

    positions = np.concatenate([c[0] for c in clouds], axis=0)
    colors = np.clip(np.concatenate([c[1] for c in clouds], axis=0), 0.0, 1.0)
    cloud = crop_workspace(ColoredPointCloud(positions, colors), cfg.box)
    return cloud, pose.copy()


def success_of(state: SimState) -> bool:
    if state.task.task_id == "pick_place":
        cube = state.object("cube")
        placed = float(np.linalg.norm(cube.position - state.goal_position)) <= state.task.tolerance
        return placed and state.attached is None
    tee = state.object("tee")
    return float(np.linalg.norm(tee.position[:2] - state.goal_position[:2])) <= state.task.tolerance


def _resting_z(state: SimState, obj: ObjectState) -> float:
    lay = _Layout(state.config.box)
    base = lay.table_z
    if obj.name == "cube":
        pad = state.object("pad")
        on_pad = np.linalg.norm(obj.position[:2] - pad.position[:2]) <= pad.radius
        if on_pad:
            base = pad.position[2] + pad.size[2] / 2
    return base + obj.size[2] / 2


def step(state: SimState, action: PoseEE):
    """Advance one tick toward the action target.

    Returns (state', observation, done, success, info); an action outside the
    workspace is rejected (state unchanged, ``info['rejected']``).
    """
    cfg = state.config
    if not bool(cfg.box.contains(action.position.reshape(1, 3))[0]):
        return state, observe(state), False, False, {"rejected": True}

    st = state.copy()
    ee = st.ee_pose
    delta = action.position - ee.position
    dist = float(np.linalg.norm(delta))
    if dist > cfg.step_cap:
        delta = delta * (cfg.step_cap / dist)
    new_pos = ee.position + delta
    new_pose = PoseEE(new_pos, action.euler, int(action.gripper))

    # Grasping: a closed gripper near a graspable object attaches it.
    if new_pose.gripper == 1 and st.attached is None:
        for obj in st.objects:
            if obj.graspable and np.linalg.norm(obj.position - new_pose.position) <= cfg.attach_radius:
                st.attached = obj.name
                st.attach_offset = obj.position - new_pose.position
                break
    if new_pose.gripper == 0 and st.attached is not None:
        dropped = st.object(st.attached)
        st.attached = None
        dropped.position = dropped.position.copy()
        dropped.position[2] = _resting_z(st, dropped)

    if st.attached is not None:
        carried = st.object(st.attached)
        carried.position = new_pose.position + st.attach_offset

    # Pushing: hard overlap resolution against the ee disc, horizontal only.
    for obj in st.objects:
        if not obj.pushable or st.attached == obj.name:
            continue
        z_lo = obj.position[2] - obj.size[2] / 2
        z_hi = obj.position[2] + obj.size[2] / 2
        if not (z_lo - 0.01 <= new_pose.position[2] <= z_hi + 0.02):
            continue
        off = obj.position[:2] - new_pose.position[:2]
        d = float(np.linalg.norm(off))
        reach = cfg.ee_radius + obj.radius
        if d < reach:
            direction = off / d if d > 1e-9 else np.array([1.0, 0.0])
            obj.position = obj.position.copy()
            obj.position[:2] = new_pose.position[:2] + direction * reach
            obj.position[:2] = np.clip(
                obj.position[:2], cfg.box.lo[:2] + obj.radius, cfg.box.hi[:2] - obj.radius
            )

    st.ee_pose = new_pose
    st.step_count = state.step_count + 1
    succ = success_of(st)
    done = succ or st.step_count >= st.task.horizon
    return st, observe(st), done, succ, {"rejected": False}
