"""Scripted demonstrations for seeding constraint learning.

Transit runs on the same joint-space machinery the executor uses
(collision-checked IK plus motion planning), because a folded arm cannot
cross a cluttered desk on blind end-effector deltas. Only the
contact-critical segments are scripted delta commands: the short descent
onto a grasp handle and the lowering of a held object onto its target.
Those are the segments a person would demonstrate, and their ticks carry
the "human" label.

Grasp points and staging poses are jittered per seed so the extracted
constraint sets cover a region rather than a single pose.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .config import Params
from .episode import Episode, EpisodeOutcome, StateSnap, Step
from .gate import goal_satisfied
from .geom import Pose2, wrap_angle
from .planner import Unreachable, motion_plan, solve_kin
from .tasks import TaskSpec
from .world import Command, World
from . import arm as arm_mod

_APPROACH = 0.18      # pregrasp height above the handle; the scripted
                      # descent covers this distance on straight deltas
_PHASE_CAP = 900      # ticks before a scripted phase counts as stuck; the
                      # final descent can spend hundreds of ticks trading
                      # rotation against a wrist workspace boundary
_TRAJ_CAP = 600       # ticks per planned trajectory
_STALL_CAP = 25
# wrist angles to try at the pregrasp point, downward-facing first; the far
# entries matter when the handle sits near the reach boundary and only an
# oblique wrist keeps the elbow solvable
_WRIST_FAN = tuple(
    -math.pi / 2 + off
    for off in (0.0, 0.4, -0.4, 0.8, -0.8, 1.2, -1.2, 1.6, -1.6, 2.0, -2.0, 2.4, -2.4)
)


def scripted_demo(world: World, task: TaskSpec, params: Params, seed: int) -> Episode:
    rng = np.random.default_rng(seed ^ 0x5EED)
    state = world.initial_state(seed)
    ep = Episode(task=task.name, seed=seed, noise=(0.0, 0.0), steps=[], events=[])
    tick = 0
    wp = world.params
    # a stuck goal config is better abandoned for the next wrist candidate
    # than ground against a full planning budget
    pp = dataclasses.replace(params.planner, rrt_iters=1200)

    def snap() -> StateSnap:
        return StateSnap(
            config=state.config,
            poses=dict(state.poses),
            gripper=state.gripper,
            held=state.held,
            attachments=state.attachments,
        )

    def do(cmd: Command):
        nonlocal state, tick
        cmd = world.clamp_command(cmd)
        pre = snap()
        state = world.step(state, cmd)
        ep.steps.append(
            Step(t=tick, state=pre, action=cmd.as_tuple(), label="human", schema_index=-1)
        )
        tick += 1

    def finish(reason: str, detail: str = "") -> Episode:
        ep.outcome = EpisodeOutcome(
            reason=reason, handoffs=len(task.attach_pairs()), plans=0, ticks=tick,
            detail=detail,
        )
        return ep

    def tip():
        return world.ee_pose(state).position()

    def run_traj(traj) -> bool:
        """Follow planned waypoints in joint space; True when completed."""
        nonlocal state, tick
        grip = state.held is not None
        waypoints = traj.waypoints[1:] if len(traj) > 1 else traj.waypoints
        budget = _TRAJ_CAP
        for target_q in waypoints:
            # exact landings keep every per-tick chord on a validated edge
            stalled = 0
            while float(np.linalg.norm(np.subtract(state.config, target_q))) > 1e-9:
                pre = snap()
                ee0 = world.ee_pose(state)
                state = world.step_joints(state, target_q, grip)
                ee1 = world.ee_pose(state)
                ep.steps.append(
                    Step(
                        t=tick,
                        state=pre,
                        action=(
                            ee1.x - ee0.x,
                            ee1.y - ee0.y,
                            wrap_angle(ee1.theta - ee0.theta),
                            int(grip),
                        ),
                        label="tamp",
                        schema_index=-1,
                    )
                )
                tick += 1
                budget -= 1
                stalled = stalled + 1 if state.config == pre.config else 0
                if stalled > _STALL_CAP or budget <= 0:
                    return False
        return True

    def transit_to(q_to) -> bool:
        traj = motion_plan(
            world, state.config, q_to, state.poses, state.held, rng, pp
        )
        return traj is not None and run_traj(traj)

    def pregrasp_candidates(point):
        """Collision-free configs with the tip at `point`, wrist downward."""
        found = []
        for theta in _WRIST_FAN:
            pose = Pose2(float(point[0]), float(point[1]), theta)
            for q in arm_mod.ik_exact(wp.arm, pose):
                if world.config_collides(q, state.poses, state.held):
                    continue
                if any(np.linalg.norm(q - f) < 0.05 for f in found):
                    continue
                found.append(q)
        return found

    def goto_tip(target, grip: bool, tol: float) -> bool:
        """Drive the gripper tip to a point; True when reached in budget."""
        best = math.inf
        since_gain = 0
        for _ in range(_PHASE_CAP):
            d = np.asarray(target, dtype=float) - tip()
            dist = float(np.linalg.norm(d))
            if dist <= tol:
                return True
            if dist < best - 1e-4:
                best = dist
                since_gain = 0
            else:
                since_gain += 1
                if since_gain > 30:
                    return False
            do(Command(float(d[0]), float(d[1]), 0.0, grip))
        return False

    def goto_child(name: str, target, until_attach) -> bool:
        """Lower the held object onto its target until the tolerance latches."""
        for _ in range(_PHASE_CAP):
            if world.good_attach(state, *until_attach):
                return True
            cur = world.object_pose(state, name)
            do(
                Command(
                    target.x - cur.x,
                    target.y - cur.y,
                    wrap_angle(target.theta - cur.theta),
                    True,
                )
            )
        return world.good_attach(state, *until_attach)

    def align_child(name: str, point, theta: float) -> None:
        """Rotate the held object toward `theta` while hovering near `point`.

        Best effort: the wrist may hit its workspace boundary up here, and
        the descent finishes whatever rotation is left once it is feasible.
        """
        last = None
        for _ in range(120):
            cur = world.object_pose(state, name)
            err = wrap_angle(theta - cur.theta)
            if abs(err) <= 0.05:
                return
            if last is not None and abs(err - last) < 1e-4:
                return
            last = err
            do(Command(point.x - cur.x, point.y - cur.y, err, True))

    for child, parent in task.attach_pairs():
        spec = task.attach_for(child, parent)
        target = world.object_pose(state, parent).compose(spec.rel)

        # transit to a pregrasp perch above the handle
        off = float(rng.uniform(-0.025, 0.025))
        obj = world.object_pose(state, child)
        cth = obj.theta
        handle = world.handle_world(state, child) + np.array(
            [off * np.cos(cth), off * np.sin(cth)]
        )
        candidates = pregrasp_candidates((handle[0], handle[1] + _APPROACH))
        if not candidates:
            return finish("tamp-failure", f"no pregrasp config above {child}")

        def placeable(q_pre) -> bool:
            # would the grasp this wrist angle produces keep the aligned
            # placement inside the wrist workspace, with margin for drift
            ee_g = Pose2(float(handle[0]), float(handle[1]), arm_mod.fk(wp.arm, q_pre).theta)
            g = ee_g.invert().compose(obj)
            pe = target.compose(g.invert())
            l1, l2, l3 = wp.arm.link_lengths
            wx = pe.x - l3 * math.cos(pe.theta)
            wy = pe.y - l3 * math.sin(pe.theta)
            return math.hypot(wx, wy) <= l1 + l2 - 0.03

        candidates.sort(key=lambda q: not placeable(q))
        # a descent can stall when the elbow drags across a neighbour, so a
        # failed attempt falls through to the next perch rather than
        # aborting; a stall inside the latch radius still gets a grip try
        for q_pre in candidates:
            if not transit_to(q_pre):
                continue
            goto_tip(handle, False, tol=0.4 * wp.grasp_tol)
            if float(np.linalg.norm(np.asarray(handle) - tip())) > wp.grasp_tol:
                continue
            do(Command(0.0, 0.0, 0.0, True))
            if state.held is not None and state.held[0] == child:
                break
            do(Command(0.0, 0.0, 0.0, False))
        if state.held is None or state.held[0] != child:
            return finish("tamp-failure", f"could not grasp {child}")

        # transit to a staging pose above the attach target; the staging
        # orientation is whatever the wrist can reach there, with the
        # residual rotation scripted out before the final descent, because
        # low placements often leave the aligned wrist pose outside the
        # two-link annulus
        staged = False
        for theta_off in (0.0, 0.35, -0.35, 0.7, -0.7, 1.05, -1.05, 1.4, -1.4):
            lift = float(rng.uniform(0.16, 0.24))
            staging = Pose2(
                target.x + float(rng.uniform(-0.02, 0.02)),
                target.y + lift,
                wrap_angle(target.theta + theta_off),
            )
            try:
                q_stage = solve_kin(
                    world, state.held[1], staging, state.poses, child, rng,
                    pp, q_seed=state.config,
                )
            except Unreachable:
                continue
            if transit_to(q_stage):
                staged = True
                break
        if not staged:
            return finish("tamp-failure", f"no staging pose above {parent} worked")
        align_child(child, staging, target.theta)

        # scripted: lower until the attachment tolerance is met, release
        if not goto_child(child, target, until_attach=(child, parent)):
            return finish("tamp-failure", f"final descent of {child} stalled")
        do(Command(0.0, 0.0, 0.0, False))
        if (child, parent) not in state.attached_pairs():
            return finish("tamp-failure", f"release of {child} did not attach")

    if goal_satisfied(world, state, task.problem.goal):
        return finish("goal-reached")
    return finish("tamp-failure", "script finished but the goal does not hold")


def collect_demos(
    world: World, task: TaskSpec, params: Params, n: int, seed0: int = 0
) -> list[Episode]:
    """n scripted demonstrations on fresh scene draws."""
    return [scripted_demo(world, task, params, seed0 + i) for i in range(n)]
