"""Delegation-gated execution: tracing, handoffs, timeouts, the oracle."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from desktamp.arm import fk
from desktamp.config import NOISE_LEVELS, NoiseParams, Params
from desktamp.gate import (
    OperatorView,
    RemoteHuman,
    ScriptedOracle,
    goal_satisfied,
    run_gated,
)
from desktamp.geom import Pose2
from desktamp.planner import BoundStep
from desktamp.tasks import load_task_text
from desktamp.world import Command, World

L0 = NoiseParams()

DONE_AT_START = """
(domain trivial
  (predicates
    (fluent (AtConf conf) (Empty) (AtGrasp obj grasp) (AtPose obj pose)
            (Attached obj obj))
    (static (Motion conf traj conf) (Safe traj) (Grasp obj grasp)
            (Pose obj pose)))
  (action move
    (params (?q1 conf) (?t traj) (?q2 conf))
    (con (Motion ?q1 ?t ?q2) (Safe ?t))
    (pre (AtConf ?q1))
    (eff (AtConf ?q2) (not (AtConf ?q1)))))

(problem done-at-start
  (domain trivial)
  (objects (brick (shape box 0.1 0.1) (fixed) (at 1.0 -0.9 0)))
  (attach)
  (obstacles)
  (conf 0.3 0.3 0.3)
  (init (Empty))
  (goal (and (Empty))))
"""


class NullOperator:
    label = "human"

    def command(self, view):
        return Command()


class WildOperator:
    """Sends commands far outside the per-tick bounds."""

    label = "human"

    def command(self, view):
        return Command(10.0, -8.0, 4.0, False)


def _human_segments(ep):
    return ep.operator_segments()


def _assert_trace_invariants(ep, world, operator_label="human"):
    p = world.params
    assert ep.outcome is not None
    assert len(ep.steps) == ep.outcome.ticks
    for i, s in enumerate(ep.steps):
        assert s.t == i
        assert s.label in ("tamp", operator_label)
        dx, dy, dth, grip = s.action
        assert math.hypot(dx, dy) <= p.max_step + 1e-9
        assert abs(dth) <= p.max_rot + 1e-9
        assert grip in (0, 1)
    # schema_index is constant inside each delegated segment
    for s_start, s_end in _human_segments(ep):
        idxs = {s.schema_index for s in ep.steps[s_start:s_end]}
        assert len(idxs) == 1
    # handoff events sit exactly at segment starts
    hand_ticks = [e["tick"] for e in ep.events if e["kind"] == "handoff"]
    assert hand_ticks == [s for s, _ in _human_segments(ep)]
    # a fresh plan precedes any tamp work that follows a delegated segment
    plan_ticks = {e["tick"] for e in ep.events if e["kind"] == "plan"}
    for _, s_end in _human_segments(ep):
        if any(s.label == "tamp" for s in ep.steps[s_end:]):
            assert s_end in plan_ticks
    assert {e["kind"] for e in ep.events} <= {"plan", "handoff"}


def test_goal_at_start_finishes_without_commands():
    params = Params()
    task = load_task_text(DONE_AT_START)
    world = World(task, params.world)
    ep = run_gated(world, task, None, params, ScriptedOracle(), seed=0, noise=L0)
    assert ep.outcome.reason == "goal-reached"
    assert ep.outcome.ticks == 0 and ep.outcome.plans == 0 and ep.outcome.handoffs == 0
    assert ep.steps == [] and ep.events == []


def test_single_insertion_episode_trace(coffee, params):
    task, world, db = coffee
    ep = run_gated(world, task, db, params, ScriptedOracle(), seed=0, noise=L0)
    assert ep.outcome.reason == "goal-reached"
    assert ep.outcome.handoffs == 1
    _assert_trace_invariants(ep, world)
    assert ep.events[0] == {
        "kind": "plan",
        "tick": 0,
        "skeleton": [["move"], ["pick", "pod"], ["move"], ["attach", "pod", "machine"]],
    }
    # one delegated segment, and it closes the episode
    segs = _human_segments(ep)
    assert len(segs) == 1
    assert segs[0][1] == len(ep.steps)
    assert ep.steps[-1].label == "human"
    assert sum(1 for e in ep.events if e["kind"] == "plan") == ep.outcome.plans == 1
    hand = next(e for e in ep.events if e["kind"] == "handoff")
    assert hand["child"] == "pod" and hand["parent"] == "machine"
    # the goal state really holds at the end
    assert goal_satisfied(world, _final_state(world, ep), task.problem.goal)


def _final_state(world, ep):
    # replay the last recorded action onto the last recorded pre-state
    last = ep.steps[-1]
    from desktamp.world import WorldState

    st = WorldState(
        t=last.t,
        config=last.state.config,
        poses=last.state.poses,
        gripper=last.state.gripper,
        held=last.state.held,
        attachments=last.state.attachments,
    )
    return world.step(st, Command(*last.action[:3], bool(last.action[3])))


def test_two_handoffs_replan_between(toolhang, params):
    task, world, db = toolhang
    ep = run_gated(world, task, db, params, ScriptedOracle(), seed=1, noise=L0)
    assert ep.outcome.reason == "goal-reached"
    assert ep.outcome.handoffs == 2
    _assert_trace_invariants(ep, world)
    segs = _human_segments(ep)
    assert len(segs) == 2
    plan_ticks = sorted(e["tick"] for e in ep.events if e["kind"] == "plan")
    # initial plan, plus one replan right after the first delegated segment
    assert plan_ticks[0] == 0
    assert segs[0][1] in plan_ticks
    assert ep.outcome.plans == len(plan_ticks) == 2


def test_noop_operator_hits_the_tick_cap(coffee, params):
    task, world, db = coffee
    ep = run_gated(world, task, db, params, NullOperator(), seed=0, noise=L0)
    assert ep.outcome.reason == "operator-timeout"
    assert "hit the tick cap" in ep.outcome.detail
    segs = _human_segments(ep)
    assert len(segs) == 1
    assert segs[0][1] - segs[0][0] == params.gate.step_cap


def test_oversized_commands_recorded_clamped(coffee, params):
    task, world, db = coffee
    ep = run_gated(world, task, db, params, WildOperator(), seed=0, noise=L0)
    assert ep.outcome.reason == "operator-timeout"
    _assert_trace_invariants(ep, world)
    human = [s for s in ep.steps if s.label == "human"]
    assert human
    for s in human:
        dx, dy, dth, _ = s.action
        assert math.hypot(dx, dy) == pytest.approx(world.params.max_step)
        assert dth == pytest.approx(world.params.max_rot)


def test_missing_db_is_a_plan_failure(coffee, params):
    task, world, _ = coffee
    ep = run_gated(world, task, None, params, ScriptedOracle(), seed=0, noise=L0)
    assert ep.outcome.reason == "plan-failure"
    assert "BindingExhausted" in ep.outcome.detail
    assert ep.outcome.plans == 1
    assert ep.steps == []


def _attach_view(world, pod_pose):
    st0 = world.initial_state(0)
    ee = fk(world.arm, np.array(st0.config))
    g = ee.invert().compose(pod_pose)
    st = replace(
        st0, poses={"machine": st0.poses["machine"]}, gripper=True, held=("pod", g)
    )
    step = BoundStep(
        schema="attach", kind="attach", human=True, params=(),
        assignment={}, objects=("pod", "machine"),
    )
    obs = world.perceive(st, L0, seed=0)
    return OperatorView(world, st, obs, step, 0), st


def test_oracle_saturates_toward_the_attach_pose(coffee):
    _, world, _ = coffee
    # attach target is machine + (0, 0.25); start a full unit above it
    view, _ = _attach_view(world, Pose2(2.0, 0.75, 0.0))
    cmd = ScriptedOracle().command(view)
    assert cmd.grip is True
    assert math.hypot(cmd.dx, cmd.dy) == pytest.approx(world.params.max_step)
    assert cmd.dx == pytest.approx(0.0, abs=1e-12)
    assert cmd.dy < 0


def test_oracle_releases_inside_tolerance(coffee):
    _, world, _ = coffee
    view, st = _attach_view(world, Pose2(2.0, -0.25, 0.0))
    assert world.good_attach(st, "pod", "machine")
    cmd = ScriptedOracle().command(view)
    assert cmd == Command(0.0, 0.0, 0.0, False)


def test_oracle_reapproaches_after_a_drop(coffee):
    _, world, _ = coffee
    st0 = world.initial_state(0)
    ee = world.ee_pose(st0)
    far = Pose2(ee.x - 1.0, ee.y, 0.0)
    st = replace(st0, poses={**st0.poses, "pod": far})
    step = BoundStep(
        schema="attach", kind="attach", human=True, params=(),
        assignment={}, objects=("pod", "machine"),
    )
    view = OperatorView(world, st, world.perceive(st, L0, seed=0), step, 0)
    cmd = ScriptedOracle().command(view)
    assert cmd.grip is False  # too far to close yet
    assert cmd.dtheta == 0.0
    assert math.hypot(cmd.dx, cmd.dy) == pytest.approx(world.params.max_step)
    assert cmd.dx < 0


def test_oracle_noise_amplitude(coffee):
    _, world, _ = coffee
    view, _ = _attach_view(world, Pose2(2.0, 0.75, 0.0))
    p = world.params
    clean = ScriptedOracle().command(view)
    noisy = ScriptedOracle(cmd_noise=0.2, seed=9)
    saw_different = False
    for _ in range(200):
        cmd = noisy.command(view)
        assert abs(cmd.dx - clean.dx) <= 0.2 * p.max_step + 1e-12
        assert abs(cmd.dy - clean.dy) <= 0.2 * p.max_step + 1e-12
        assert abs(cmd.dtheta - clean.dtheta) <= 0.2 * p.max_rot + 1e-12
        saw_different = saw_different or cmd != clean
    assert saw_different


def test_noisy_oracle_still_satisfies_effects(coffee, params):
    task, world, db = coffee
    ok = 0
    for seed in range(20):
        op = ScriptedOracle(cmd_noise=0.2, seed=seed)
        ep = run_gated(world, task, db, params, op, seed=seed, noise=L0)
        ok += ep.outcome.reason == "goal-reached"
    assert ok >= 19


def test_observation_channel_recorded_under_noise(coffee, params):
    task, world, db = coffee
    ep = run_gated(
        world, task, db, params, ScriptedOracle(), seed=1, noise=NOISE_LEVELS["L1"]
    )
    assert ep.outcome.reason == "goal-reached"
    assert ep.noise == (NOISE_LEVELS["L1"].pos, NOISE_LEVELS["L1"].ang)
    human = [s for s in ep.steps if s.label == "human"]
    tamp = [s for s in ep.steps if s.label == "tamp"]
    assert human and tamp
    assert all(s.obs_poses is not None for s in human)
    assert all(s.obs_poses is None for s in tamp)
    assert human[0].observed_poses() is human[0].obs_poses
    assert tamp[0].observed_poses() is tamp[0].state.poses


def test_remote_mailbox_latest_wins():
    rh = RemoteHuman()
    assert rh.command(None) == Command()
    rh.put(Command(0.01, 0.0, 0.0, False))
    rh.put(Command(0.02, 0.0, 0.0, True))
    assert rh.command(None) == Command(0.02, 0.0, 0.0, True)
    assert rh.take() == Command(0.02, 0.0, 0.0, True)
    assert rh.take() is None
    rh.put(Command(0.03, 0.0, 0.0, False))
    rh.clear()
    assert rh.command(None) == Command()
