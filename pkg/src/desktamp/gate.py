"""Delegation-gated control loop.

The planner executes its own steps autonomously; on reaching a delegated
step it hands control to an operator, one tick at a time, until the step's
declared effects hold in the world, then discards the remainder of the plan
and replans. Exactly one controller owns any tick, and every tick is
recorded with that controller's label.

`episode_ticks` is a generator so the same loop body serves three drivers:
`run_gated` for a single synchronous episode, the fleet scheduler which
interleaves many sessions, and the websocket server which awaits remote
commands. It yields ("tamp", state) for autonomous ticks and
("request", prompt, view) when it wants an operator command, which the
driver supplies through .send().
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import NoiseParams, Params
from .constraints import ConstraintDB
from .episode import Episode, EpisodeOutcome, StateSnap, Step
from .geom import wrap_angle
from .lang import Formula
from .planner import DEFERRED, BoundStep, PlanError, plan
from .tasks import TaskSpec
from .world import Command, Observation, World, WorldState

_MOVE_TICK_CAP = 600
_STALL_CAP = 25


@dataclass(frozen=True)
class OperatorView:
    """What an operator gets to see when asked for a command.

    `obs` is the perception channel (noisy poses); `state` is ground truth
    and is only legitimate input for the scripted stand-in, which plays the
    role of a person watching the actual scene.
    """

    world: World
    state: WorldState
    obs: Observation
    step: BoundStep
    segment_tick: int


class ScriptedOracle:
    """Stand-in operator that finishes delegated steps with P-control.

    Reads ground-truth poses, drives the held object toward the declared
    attach pose, opens the gripper once inside tolerance, and re-grasps
    after an accidental drop. `cmd_noise` adds uniform noise to each
    command component, scaled as that fraction of the per-tick motion
    bounds (max_step for translation, max_rot for rotation).
    """

    label = "human"

    def __init__(self, cmd_noise: float = 0.0, seed: int = 0, gain: float = 1.0):
        self.cmd_noise = cmd_noise
        self.gain = gain
        self.rng = np.random.default_rng(seed)

    def _noisy(self, world: World, dx: float, dy: float, dth: float):
        if self.cmd_noise > 0.0:
            sp = self.cmd_noise * world.params.max_step
            sr = self.cmd_noise * world.params.max_rot
            dx += float(self.rng.uniform(-sp, sp))
            dy += float(self.rng.uniform(-sp, sp))
            dth += float(self.rng.uniform(-sr, sr))
        return dx, dy, dth

    def command(self, view: OperatorView) -> Command:
        world, state, step = view.world, view.state, view.step
        child, parent = step.objects[0], step.objects[-1]
        spec = world.task.attach_for(child, parent)
        if state.held is not None and state.held[0] == child:
            if world.good_attach(state, child, parent):
                return Command(0.0, 0.0, 0.0, False)
            cur = world.object_pose(state, child)
            target = world.object_pose(state, parent).compose(spec.rel)
            bounded = world.clamp_command(
                Command(
                    self.gain * (target.x - cur.x),
                    self.gain * (target.y - cur.y),
                    self.gain * wrap_angle(target.theta - cur.theta),
                    True,
                )
            )
            dx, dy, dth = self._noisy(world, bounded.dx, bounded.dy, bounded.dtheta)
            return Command(dx, dy, dth, True)
        # dropped or never held: approach the handle, close when near
        tip = world.ee_pose(state).position()
        handle = world.handle_world(state, child)
        d = handle - tip
        near = float(np.linalg.norm(d)) <= 0.8 * world.params.grasp_tol
        bounded = world.clamp_command(
            Command(self.gain * float(d[0]), self.gain * float(d[1]), 0.0, near)
        )
        dx, dy, _ = self._noisy(world, bounded.dx, bounded.dy, 0.0)
        return Command(dx, dy, 0.0, near)


class PolicyOperator:
    """Operator backed by a trained policy; sees only the noisy channel."""

    label = "policy"

    def __init__(self, policy, task: TaskSpec):
        self.policy = policy
        self.task = task

    def command(self, view: OperatorView) -> Command:
        from .imitate import featurize_obs

        feats = featurize_obs(self.task, view.obs, view.world.arm)
        dx, dy, dth, grip = self.policy.act(feats)
        return Command(float(dx), float(dy), float(dth), bool(grip))


class RemoteHuman:
    """Mailbox operator for the websocket server: latest command wins."""

    label = "human"

    def __init__(self):
        self._latest: Command | None = None

    def put(self, cmd: Command) -> None:
        self._latest = cmd

    def clear(self) -> None:
        self._latest = None

    def take(self) -> Command | None:
        cmd, self._latest = self._latest, None
        return cmd

    def command(self, view: OperatorView) -> Command:
        return self._latest if self._latest is not None else Command()


# --------------------------------------------------------------------------


def goal_satisfied(world: World, state: WorldState, goal: Formula) -> bool:
    """Ground-truth goal check over the discrete fluents."""
    for lit in goal:
        if lit.pred == "Attached":
            ok = (lit.args[0], lit.args[1]) in state.attached_pairs()
        elif lit.pred == "Empty":
            ok = state.held is None
        elif lit.pred == "AtGrasp":
            ok = state.held is not None and state.held[0] == lit.args[0]
        elif lit.pred == "AtPose":
            held_it = state.held is not None and state.held[0] == lit.args[0]
            ok = lit.args[1] == "*" and not held_it
        elif lit.pred == "AtConf":
            ok = lit.args[0] == "*"
        else:
            ok = False
        if ok != lit.positive:
            return False
    return True


def effects_met(world: World, state: WorldState, task: TaskSpec, bstep: BoundStep) -> bool:
    """True when every positive effect of the step holds in the world."""
    schema = task.domain.schema(bstep.schema)
    con_by_pose_var = {}
    for lit in schema.con:
        if lit.pred == "GoodAttach":
            con_by_pose_var[lit.args[1]] = (lit.args[0], lit.args[2])
    for lit in schema.eff:
        if not lit.positive:
            continue
        if lit.pred == "Attached":
            child = bstep.assignment[lit.args[0]]
            parent = bstep.assignment[lit.args[1]]
            if (child, parent) not in state.attached_pairs():
                return False
        elif lit.pred == "Empty":
            if state.held is not None:
                return False
        elif lit.pred == "AtGrasp":
            obj = bstep.assignment[lit.args[0]]
            if state.held is None or state.held[0] != obj:
                return False
        elif lit.pred == "AtPose":
            pair = con_by_pose_var.get(lit.args[1])
            if pair is not None:
                child = bstep.assignment[pair[0]]
                parent = bstep.assignment[pair[1]]
                if not world.good_attach(state, child, parent):
                    return False
        # AtConf effects hold wherever the arm settled
    return True


def _plan_seed(seed: int, ordinal: int) -> int:
    return (seed * 9973 + ordinal) % (2**31 - 1)


def episode_ticks(
    world: World,
    task: TaskSpec,
    db: ConstraintDB | None,
    params: Params,
    seed: int,
    noise: NoiseParams,
    operator_label: str = "human",
):
    """Generator form of the gated loop; returns the finished Episode.

    Yields ("tamp", state) once per autonomous tick (send None back) and
    ("request", prompt, view) when an operator command is wanted (send a
    Command back).
    """
    state = world.initial_state(seed)
    ep = Episode(
        task=task.name, seed=seed, noise=(noise.pos, noise.ang), steps=[], events=[]
    )
    tick = 0
    plans = 0
    handoffs = 0
    goal = task.problem.goal
    obs_base = seed * 1_000_003 + 7
    keep_obs = noise.pos > 0.0 or noise.ang > 0.0

    def observe() -> Observation:
        return world.perceive(state, noise, obs_base + tick)

    def snap() -> StateSnap:
        return StateSnap(
            config=state.config,
            poses=dict(state.poses),
            gripper=state.gripper,
            held=state.held,
            attachments=state.attachments,
        )

    def finish(reason: str, detail: str = "") -> Episode:
        ep.outcome = EpisodeOutcome(
            reason=reason, handoffs=handoffs, plans=plans, ticks=tick, detail=detail
        )
        return ep

    while True:
        if goal_satisfied(world, state, goal):
            return finish("goal-reached")
        if plans >= params.gate.replan_cap:
            return finish("plan-failure", "replan cap reached")
        obs = observe()
        try:
            bplan = plan(world, obs, goal, db, _plan_seed(seed, plans), params.planner)
        except PlanError as e:
            plans += 1
            return finish("plan-failure", f"{type(e).__name__}: {e}")
        plans += 1
        ep.events.append(
            {
                "kind": "plan",
                "tick": tick,
                "skeleton": [list(s) for s in bplan.skeleton()],
            }
        )
        if not bplan.steps:
            return finish(
                "plan-failure", "perceived goal satisfied but true goal is not"
            )

        for idx, bstep in enumerate(bplan.steps):
            if bstep.human:
                handoffs += 1
                child, parent = bstep.objects[0], bstep.objects[-1]
                ep.events.append(
                    {"kind": "handoff", "tick": tick, "child": child, "parent": parent}
                )
                prompt = {
                    "schema": bstep.schema,
                    "child": child,
                    "parent": parent,
                    "index": idx,
                }
                met = False
                for k in range(params.gate.step_cap):
                    obs = observe()
                    view = OperatorView(world, state, obs, bstep, k)
                    cmd = yield ("request", prompt, view)
                    if cmd is None:
                        cmd = Command()
                    # record what actually executes, not what was asked for
                    cmd = world.clamp_command(cmd)
                    pre = snap()
                    state = world.step(state, cmd)
                    ep.steps.append(
                        Step(
                            t=tick,
                            state=pre,
                            action=cmd.as_tuple(),
                            label=operator_label,
                            schema_index=idx,
                            obs_poses=dict(obs.poses) if keep_obs else None,
                        )
                    )
                    tick += 1
                    if effects_met(world, state, task, bstep):
                        met = True
                        break
                if not met:
                    return finish(
                        "operator-timeout", f"delegated step {idx} hit the tick cap"
                    )
                break  # discard the plan suffix and replan

            if bstep.kind == "move":
                traj = bstep.first("traj")
                if traj is DEFERRED:
                    return finish(
                        "plan-failure", "unbound trajectory reached execution"
                    )
                move_ticks = 0
                stalled = 0
                failed = None
                waypoints = traj.waypoints[1:] if len(traj) > 1 else traj.waypoints
                for wp in waypoints:
                    # land on each waypoint exactly; per-tick chords then lie
                    # on edges the planner validated, so backoff cannot fire
                    while (
                        float(np.linalg.norm(np.subtract(state.config, wp))) > 1e-9
                    ):
                        grip = state.held is not None
                        pre = snap()
                        ee0 = world.ee_pose(state)
                        state = world.step_joints(state, wp, grip)
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
                                schema_index=idx,
                            )
                        )
                        tick += 1
                        move_ticks += 1
                        yield ("tamp", state)
                        if state.config == pre.config:
                            stalled += 1
                        else:
                            stalled = 0
                        if stalled > _STALL_CAP:
                            failed = "move stalled against an obstacle"
                            break
                        if move_ticks > _MOVE_TICK_CAP:
                            failed = "move exceeded its tick budget"
                            break
                    if failed:
                        break
                if failed:
                    return finish("tamp-failure", failed)
                continue

            if bstep.kind == "pick":
                obj = bstep.objects[0]
                pre = snap()
                state = world.step(state, Command(0.0, 0.0, 0.0, True))
                ep.steps.append(
                    Step(
                        t=tick,
                        state=pre,
                        action=(0.0, 0.0, 0.0, 1),
                        label="tamp",
                        schema_index=idx,
                    )
                )
                tick += 1
                yield ("tamp", state)
                if state.held is None or state.held[0] != obj:
                    return finish("tamp-failure", f"grasp of {obj} missed")
                continue

            if bstep.kind == "place":
                pre = snap()
                state = world.step(state, Command(0.0, 0.0, 0.0, False))
                ep.steps.append(
                    Step(
                        t=tick,
                        state=pre,
                        action=(0.0, 0.0, 0.0, 0),
                        label="tamp",
                        schema_index=idx,
                    )
                )
                tick += 1
                yield ("tamp", state)
                if state.held is not None:
                    return finish("tamp-failure", "release failed")
                continue

            return finish("plan-failure", f"unknown step kind {bstep.kind}")


def run_gated(
    world: World,
    task: TaskSpec,
    db: ConstraintDB | None,
    params: Params,
    operator,
    seed: int,
    noise: NoiseParams,
) -> Episode:
    """Drive one gated episode to completion with the given operator."""
    gen = episode_ticks(
        world, task, db, params, seed, noise, operator_label=operator.label
    )
    try:
        item = next(gen)
        while True:
            if item[0] == "tamp":
                item = gen.send(None)
            else:
                _, _prompt, view = item
                item = gen.send(operator.command(view))
    except StopIteration as stop:
        return stop.value
