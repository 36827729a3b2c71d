"""Planar kinematic world: arm, rigid objects, grasping, attachment.

The world is split into an immutable scene context (`World`: task geometry
plus parameters) and per-tick snapshots (`WorldState`). Stepping returns a
new snapshot; nothing mutates. Two command channels exist with identical
safety clamps: end-effector deltas (operators) and joint targets
(trajectory execution).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import arm as arm_mod
from .config import NoiseParams, WorldParams
from .geom import (
    Pose2,
    min_segseg_distance,
    point_in_polygon,
    polygon_distance,
    segment_polygon_distance,
    transform_polygon,
    wrap_angle,
)
from .tasks import TaskSpec

# Cartesian speed of the tip per unit joint speed, one term per joint of a
# unit-link 3R arm; used to sub-step joint motions under the tick bounds.
_JOINT_GAIN = np.array([3.0, 2.0, 1.0])


@dataclass(frozen=True)
class WorldState:
    t: int
    config: tuple[float, float, float]
    poses: dict[str, Pose2]              # free and attached objects only
    gripper: bool                        # True = closed
    held: tuple[str, Pose2] | None       # (object, grasp) while gripping
    attachments: tuple[tuple[str, str, Pose2], ...]  # (child, parent, rel)

    def attached_pairs(self) -> tuple[tuple[str, str], ...]:
        return tuple((c, p) for c, p, _ in self.attachments)


@dataclass(frozen=True)
class Observation:
    t: int
    config: tuple[float, float, float]
    poses: dict[str, Pose2]
    gripper: bool
    held: tuple[str, Pose2] | None
    attachments: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Command:
    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0
    grip: bool = False

    def as_tuple(self) -> tuple[float, float, float, int]:
        return (self.dx, self.dy, self.dtheta, int(self.grip))


class World:
    def __init__(self, task: TaskSpec, params: WorldParams):
        self.task = task
        self.params = params
        self.arm = params.arm
        self._scene_cache: dict[tuple, tuple] = {}

    # -- construction ------------------------------------------------------

    def initial_state(self, seed: int) -> WorldState:
        rng = np.random.default_rng(seed)
        poses: dict[str, Pose2] = {}
        arm_pts = arm_mod.joint_points(self.arm, np.array(self.task.init_conf))
        for name in self.task.problem.objects:
            spec = self.task.objects[name]
            if spec.pose is not None:
                poses[name] = spec.pose
                continue
            xlo, xhi, ylo, yhi, tlo, thi = spec.region
            for _ in range(200):
                cand = Pose2(
                    float(rng.uniform(xlo, xhi)),
                    float(rng.uniform(ylo, yhi)),
                    wrap_angle(float(rng.uniform(tlo, thi))),
                )
                if self._placement_ok(name, cand, poses, arm_pts):
                    poses[name] = cand
                    break
            else:
                raise RuntimeError(f"could not place {name} after 200 draws")
        return WorldState(
            t=0,
            config=tuple(self.task.init_conf),
            poses=poses,
            gripper=False,
            held=None,
            attachments=(),
        )

    def _placement_ok(self, name, cand, placed, arm_pts) -> bool:
        verts = transform_polygon(self.task.objects[name].shape, cand)
        for other, pose in placed.items():
            overts = transform_polygon(self.task.objects[other].shape, pose)
            if polygon_distance(verts, overts) < 0.02:
                return False
        for obs in self.task.obstacles:
            if polygon_distance(verts, obs) < 0.02:
                return False
        for i in range(len(arm_pts) - 1):
            if segment_polygon_distance(arm_pts[i], arm_pts[i + 1], verts) < 0.02:
                return False
        return True

    # -- kinematics --------------------------------------------------------

    def ee_pose(self, state: WorldState) -> Pose2:
        return arm_mod.fk(self.arm, np.array(state.config))

    def object_pose(self, state: WorldState, name: str) -> Pose2:
        if state.held is not None and state.held[0] == name:
            return self.ee_pose(state).compose(state.held[1])
        return state.poses[name]

    def handle_world(self, state: WorldState, name: str) -> np.ndarray:
        spec = self.task.objects[name]
        return self.object_pose(state, name).transform_point(spec.handle)

    # -- collision ---------------------------------------------------------

    def _scene(self, poses: dict[str, Pose2]):
        """Static collision geometry for a placement, cached by content.

        Planning queries test thousands of configurations against the same
        placement; building the edge arrays once per placement is what makes
        that affordable.
        """
        key = tuple(sorted((n, p.x, p.y, p.theta) for n, p in poses.items()))
        hit = self._scene_cache.get(key)
        if hit is not None:
            return hit
        polys = [
            transform_polygon(self.task.objects[n].shape, p)
            for n, p in poses.items()
        ] + list(self.task.obstacles)
        if polys:
            e1 = np.vstack(polys)
            e2 = np.vstack([np.roll(v, -1, axis=0) for v in polys])
        else:
            e1 = np.zeros((0, 2))
            e2 = np.zeros((0, 2))
        scene = (polys, e1, e2, {})
        if len(self._scene_cache) > 16:
            self._scene_cache.clear()
        self._scene_cache[key] = scene
        return scene

    def config_clearance(
        self,
        q,
        poses: dict[str, Pose2],
        held: tuple[str, Pose2] | None,
    ) -> float:
        """Distance from the arm at q (carrying `held`) to the scene; 0 inside.

        Every polygon here is smaller than one arm link, so boundary-distance
        tests catch all link interpenetration; the held object additionally
        needs mutual containment checks against similarly sized statics.
        """
        polys, e1, e2, memo = self._scene(poses)
        if len(e1) == 0 and held is None:
            return math.inf
        qa = np.asarray(q, dtype=float)
        # planners revisit tree nodes bit-identically; memoize per placement
        key = (qa.tobytes(), held)
        hit = memo.get(key)
        if hit is not None:
            return hit
        pts = arm_mod.joint_points(self.arm, qa)
        c = math.inf
        if len(e1):
            c = float(min_segseg_distance(pts[:-1], pts[1:], e1, e2))
        if held is not None and c > 1e-9:
            hname, g = held
            hpose = arm_mod.fk(self.arm, qa).compose(g)
            hverts = transform_polygon(self.task.objects[hname].shape, hpose)
            if len(e1):
                h2 = np.roll(hverts, -1, axis=0)
                c = min(c, float(min_segseg_distance(hverts, h2, e1, e2)))
                if c > 1e-9:
                    for verts in polys:
                        if point_in_polygon(hverts[0], verts) or point_in_polygon(
                            verts[0], hverts
                        ):
                            c = 0.0
                            break
        if c <= 1e-9:
            c = 0.0
        memo[key] = c
        return c

    def config_collides(
        self,
        q,
        poses: dict[str, Pose2],
        held: tuple[str, Pose2] | None,
    ) -> bool:
        return self.config_clearance(q, poses, held) <= 1e-9

    def state_collides(self, state: WorldState) -> bool:
        return self.config_collides(state.config, state.poses, state.held)

    # -- stepping ----------------------------------------------------------

    def clamp_command(self, cmd: Command) -> Command:
        """Scale (dx, dy) to at most max_step and clip dtheta to max_rot."""
        p = self.params
        norm = math.hypot(cmd.dx, cmd.dy)
        scale = p.max_step / norm if norm > p.max_step else 1.0
        dth = max(-p.max_rot, min(p.max_rot, cmd.dtheta))
        return Command(cmd.dx * scale, cmd.dy * scale, dth, cmd.grip)

    def _advance(self, state: WorldState, q_new: np.ndarray, grip: bool) -> WorldState:
        """Apply a collision-vetted config plus the grip bit; handles latch/release."""
        poses = state.poses
        held = state.held
        attachments = state.attachments
        if grip and not state.gripper:
            tip = arm_mod.fk(self.arm, q_new).position()
            best = None
            attached_children = {c for c, _, _ in attachments}
            for name, pose in poses.items():
                if name in attached_children or self.task.objects[name].fixed:
                    continue
                handle = pose.transform_point(self.task.objects[name].handle)
                d = float(np.linalg.norm(tip - handle))
                if d <= self.params.grasp_tol and (best is None or d < best[1]):
                    best = (name, d)
            if best is not None:
                name = best[0]
                g = arm_mod.fk(self.arm, q_new).invert().compose(poses[name])
                held = (name, g)
                poses = {n: p for n, p in poses.items() if n != name}
        elif not grip and state.gripper:
            if held is not None:
                name, g = held
                pose = arm_mod.fk(self.arm, q_new).compose(g)
                poses = dict(poses)
                poses[name] = pose
                for spec in self.task.attach_specs:
                    if spec.child != name or spec.parent not in poses:
                        continue
                    if self._good_attach_poses(poses[spec.parent], pose, spec):
                        rel = pose.relative_to(poses[spec.parent])
                        attachments = attachments + ((name, spec.parent, rel),)
                        break
                held = None
        return WorldState(
            t=state.t + 1,
            config=tuple(float(v) for v in q_new),
            poses=poses,
            gripper=grip,
            held=held,
            attachments=attachments,
        )

    def _backoff(self, state: WorldState, dq: np.ndarray) -> np.ndarray:
        """Largest tested fraction of dq that stays collision-free."""
        q = np.array(state.config)
        for frac in (1.0, 0.5, 0.25, 0.125, 0.0625):
            q_new = arm_mod.clamp_config(self.arm, q + frac * dq)
            if not self.config_collides(q_new, state.poses, state.held):
                return q_new
        return q

    def step(self, state: WorldState, cmd: Command) -> WorldState:
        """One tick of end-effector delta control (the operator channel)."""
        cmd = self.clamp_command(cmd)
        ee = self.ee_pose(state)
        target = Pose2(ee.x + cmd.dx, ee.y + cmd.dy, wrap_angle(ee.theta + cmd.dtheta))
        err = arm_mod.pose_error(target, ee)
        dq = arm_mod.dls_step(
            self.arm, np.array(state.config), err, self.params.ik_damping
        )
        q_new = self._backoff(state, dq)
        return self._advance(state, q_new, cmd.grip)

    def step_joints(self, state: WorldState, q_target, grip: bool) -> WorldState:
        """One tick toward a joint-space target, tip speed kept inside bounds."""
        q = np.array(state.config)
        dq = np.asarray(q_target, dtype=float) - q
        speed = float(_JOINT_GAIN @ np.abs(dq))
        rot = abs(float(np.sum(dq)))
        frac = min(
            1.0,
            self.params.max_step / speed if speed > 1e-12 else 1.0,
            self.params.max_rot / rot if rot > 1e-12 else 1.0,
        )
        q_new = self._backoff(state, frac * dq)
        return self._advance(state, q_new, grip)

    # -- attachment test ---------------------------------------------------

    def _good_attach_poses(self, parent: Pose2, child: Pose2, spec) -> bool:
        tol_p = spec.tol_p if spec.tol_p is not None else self.params.eps_p
        tol_th = spec.tol_th if spec.tol_th is not None else self.params.eps_th
        rel = child.relative_to(parent)
        return rel.almost_equal(spec.rel, tol_p, tol_th)

    def good_attach(self, state: WorldState, child: str, parent: str) -> bool:
        """Child sits inside the declared attach tolerance of parent."""
        spec = self.task.attach_for(child, parent)
        if spec is None:
            return False
        return self._good_attach_poses(
            self.object_pose(state, parent), self.object_pose(state, child), spec
        )

    def object_distance(self, state: WorldState, a: str, b: str) -> float:
        va = transform_polygon(self.task.objects[a].shape, self.object_pose(state, a))
        vb = transform_polygon(self.task.objects[b].shape, self.object_pose(state, b))
        return polygon_distance(va, vb)

    # -- perception --------------------------------------------------------

    def perceive(self, state: WorldState, noise: NoiseParams, seed: int) -> Observation:
        """Noisy object poses, exact proprioception. Deterministic in seed."""
        rng = np.random.default_rng(seed)
        noisy: dict[str, Pose2] = {}
        for name in sorted(state.poses):
            p = state.poses[name]
            if noise.pos == 0.0 and noise.ang == 0.0:
                noisy[name] = p
            else:
                noisy[name] = Pose2(
                    p.x + float(rng.uniform(-noise.pos, noise.pos)),
                    p.y + float(rng.uniform(-noise.pos, noise.pos)),
                    wrap_angle(p.theta + float(rng.uniform(-noise.ang, noise.ang))),
                )
        return Observation(
            t=state.t,
            config=state.config,
            poses=noisy,
            gripper=state.gripper,
            held=state.held,
            attachments=state.attached_pairs(),
        )
