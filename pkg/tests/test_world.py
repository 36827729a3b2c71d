"""Simulator semantics: placement, clamping, latch/release, perception."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from desktamp.arm import fk, ik_exact, joint_points
from desktamp.config import NoiseParams, Params
from desktamp.geom import Pose2, polygon_distance, segment_polygon_distance, transform_polygon
from desktamp.tasks import load_task, load_task_text
from desktamp.world import Command, World

# Gripper starts with its tip exactly at (2, 1) facing +x; the puck sits a
# hair off the tip so a grip command latches immediately.
GRIP_LAB = """
(domain grip-lab
  (predicates
    (fluent (AtPose obj pose) (AtGrasp obj grasp) (AtConf conf)
            (Empty) (Attached obj obj))
    (static (Grasp obj grasp) (Pose obj pose) (Kin conf grasp pose)))
  (action pick
    (params (?o obj) (?g grasp) (?p pose) (?q conf))
    (con (Grasp ?o ?g) (Pose ?o ?p) (Kin ?q ?g ?p))
    (pre (AtPose ?o ?p) (Empty) (AtConf ?q))
    (eff (AtGrasp ?o ?g) (not (AtPose ?o ?p)) (not (Empty)))))

(problem grip-lab
  (domain grip-lab)
  (objects
    (puck (shape box 0.1 0.1) (handle 0 0.02) (at 2.03 1.01 0.2))
    (slab (shape box 0.3 0.1) (fixed) (at 1.0 -0.8 0)))
  (attach (puck slab (pose 0 0.1 0)))
  (obstacles)
  (conf 1.5707963267948966 -1.5707963267948966 0)
  (init (Empty))
  (goal (and (Attached puck slab))))
"""


@pytest.fixture(scope="module")
def lab():
    params = Params()
    task = load_task_text(GRIP_LAB)
    return task, World(task, params.world)


@pytest.fixture(scope="module")
def coffee_world():
    params = Params()
    task = load_task("coffee-2d")
    return task, World(task, params.world)


def test_initial_state_pins_and_samples(coffee_world):
    task, world = coffee_world
    st = world.initial_state(7)
    assert st.t == 0 and st.gripper is False and st.held is None
    assert st.config == task.init_conf
    assert st.poses["machine"] == task.objects["machine"].pose
    pod = st.poses["pod"]
    assert 1.0 <= pod.x <= 1.4 and 0.6 <= pod.y <= 1.0 and pod.theta == 0.0


def test_initial_state_deterministic_with_clearance(coffee_world):
    task, world = coffee_world
    for seed in range(8):
        a = world.initial_state(seed)
        b = world.initial_state(seed)
        assert a.poses == b.poses
        gap = polygon_distance(
            transform_polygon(task.objects["pod"].shape, a.poses["pod"]),
            transform_polygon(task.objects["machine"].shape, a.poses["machine"]),
        )
        assert gap >= 0.02


def test_clamp_command(coffee_world):
    _, world = coffee_world
    p = world.params
    big = world.clamp_command(Command(3.0, 4.0, 1.0, True))
    assert math.hypot(big.dx, big.dy) == pytest.approx(p.max_step)
    assert big.dx / big.dy == pytest.approx(3.0 / 4.0)
    assert big.dtheta == p.max_rot
    assert big.grip is True
    small = Command(0.01, -0.02, -0.05, False)
    assert world.clamp_command(small) == small
    twice = world.clamp_command(world.clamp_command(Command(-5.0, 0.0, -2.0)))
    assert math.hypot(twice.dx, twice.dy) == pytest.approx(p.max_step)
    assert twice.dtheta == -p.max_rot


def test_grasp_recovery_algebra():
    f = Pose2(2.0, 1.0, 0.0)
    p = Pose2(2.03, 1.01, 0.2)
    g = f.invert().compose(p)
    assert g.almost_equal(Pose2(0.03, 0.01, 0.2), 1e-12, 1e-12)
    # and the grasp reproduces the object pose from the gripper frame
    assert f.compose(g).almost_equal(p, 1e-12, 1e-12)


def test_latch_records_gripper_relative_pose(lab):
    task, world = lab
    st = world.initial_state(0)
    assert world.ee_pose(st).almost_equal(Pose2(2.0, 1.0, 0.0), 1e-9, 1e-9)

    nxt = world.step(st, Command(grip=True))
    assert nxt.held is not None
    name, g = nxt.held
    assert name == "puck"
    assert g.almost_equal(Pose2(0.03, 0.01, 0.2), 1e-9, 1e-9)
    assert "puck" not in nxt.poses
    assert nxt.gripper is True


def test_release_away_from_parent_just_places(lab):
    task, world = lab
    st = world.step(world.initial_state(0), Command(grip=True))
    dropped = world.step(st, Command(grip=False))
    assert dropped.held is None and dropped.gripper is False
    assert dropped.attachments == ()
    assert dropped.poses["puck"].almost_equal(Pose2(2.03, 1.01, 0.2), 1e-9, 1e-9)


def test_release_inside_tolerance_attaches(lab):
    task, world = lab
    base = world.initial_state(0)
    q = ik_exact(world.arm, Pose2(1.0, -0.7, 0.0))[0]
    st = replace(
        base,
        config=tuple(float(v) for v in q),
        poses={"slab": task.objects["slab"].pose},
        gripper=True,
        held=("puck", Pose2(0.0, 0.0, 0.0)),
    )
    nxt = world.step(st, Command(grip=False))
    assert nxt.held is None
    assert len(nxt.attachments) == 1
    child, parent, rel = nxt.attachments[0]
    assert (child, parent) == ("puck", "slab")
    assert rel.almost_equal(Pose2(0.0, 0.1, 0.0), 1e-6, 1e-6)
    assert world.good_attach(nxt, "puck", "slab")

    # an attached child is no longer grabbable
    regrip = world.step(nxt, Command(grip=True))
    assert regrip.held is None


def test_fixed_objects_never_latch(lab):
    task, world = lab
    base = world.initial_state(0)
    q = ik_exact(world.arm, Pose2(1.0, -0.73, math.pi / 2))[0]
    st = replace(base, config=tuple(float(v) for v in q))
    # tip sits right on the slab handle, but the slab is scenery
    handle = world.handle_world(st, "slab")
    tip = world.ee_pose(st)
    assert np.linalg.norm(np.array([tip.x, tip.y]) - handle) < world.params.grasp_tol
    nxt = world.step(st, Command(grip=True))
    assert nxt.held is None


def test_step_tracks_clamped_translation(coffee_world):
    _, world = coffee_world
    st = world.initial_state(3)
    p = world.params
    before = world.ee_pose(st)
    nxt = world.step(st, Command(1.0, -1.0, 0.0))
    after = world.ee_pose(nxt)
    delta = np.array([after.x - before.x, after.y - before.y])
    moved = float(np.linalg.norm(delta))
    assert moved <= p.max_step + 5e-3  # damped IK tracks the clamped delta
    assert moved > 0.5 * p.max_step
    want = np.array([1.0, -1.0]) / math.sqrt(2)
    assert float(delta @ want) / moved > 0.95
    assert nxt.t == st.t + 1


def test_step_joints_bounds(coffee_world):
    _, world = coffee_world
    st = world.initial_state(3)
    p = world.params
    target = np.array(st.config) + np.array([0.8, -0.6, 0.4])
    nxt = world.step_joints(st, target, grip=False)
    dq = np.array(nxt.config) - np.array(st.config)
    assert abs(float(np.sum(dq))) <= p.max_rot + 1e-9
    before, after = world.ee_pose(st), world.ee_pose(nxt)
    assert math.hypot(after.x - before.x, after.y - before.y) <= p.max_step + 1e-9


def test_perceive_noise_bounds_and_determinism(coffee_world):
    _, world = coffee_world
    st = world.initial_state(5)
    noise = NoiseParams(pos=0.05, ang=math.radians(5))
    a = world.perceive(st, noise, seed=42)
    b = world.perceive(st, noise, seed=42)
    assert a.poses == b.poses
    assert a.config == st.config  # proprioception stays exact
    for name, p in st.poses.items():
        q = a.poses[name]
        assert abs(q.x - p.x) <= noise.pos and abs(q.y - p.y) <= noise.pos
        assert abs(math.remainder(q.theta - p.theta, 2 * math.pi)) <= noise.ang
    c = world.perceive(st, noise, seed=43)
    assert c.poses != a.poses


def test_perceive_zero_noise_is_identity(coffee_world):
    _, world = coffee_world
    st = world.initial_state(5)
    obs = world.perceive(st, NoiseParams(), seed=1)
    for name in st.poses:
        assert obs.poses[name] is st.poses[name]


def test_config_clearance_matches_direct_geometry(coffee_world):
    task, world = coffee_world
    st = world.initial_state(9)
    q = np.array(st.config)
    got = world.config_clearance(q, st.poses, None)
    pts = joint_points(world.arm, q)
    polys = [
        transform_polygon(task.objects[n].shape, p) for n, p in st.poses.items()
    ]
    brute = min(
        segment_polygon_distance(pts[i], pts[i + 1], poly)
        for i in range(len(pts) - 1)
        for poly in polys
    )
    assert got == pytest.approx(brute, abs=1e-9)
    assert got > 0.0


def test_config_collides_inside_obstacle(coffee_world):
    task, world = coffee_world
    st = world.initial_state(9)
    q = ik_exact(world.arm, Pose2(2.0, -0.5, 0.0))[0]  # machine center
    assert world.config_collides(q, st.poses, None)


def test_clearance_catches_held_containment(coffee_world):
    task, world = coffee_world
    st = world.initial_state(9)
    machine = st.poses["machine"]
    ee = world.ee_pose(st)
    g = ee.invert().compose(machine)  # held pod coincides with the machine
    poses = {"machine": machine}
    assert world.config_clearance(np.array(st.config), poses, ("pod", g)) == 0.0
    assert world.config_clearance(np.array(st.config), poses, None) > 0.0


def test_object_distance_and_pose_of_held(coffee_world):
    task, world = coffee_world
    st = world.initial_state(2)
    d = world.object_distance(st, "pod", "machine")
    expect = polygon_distance(
        transform_polygon(task.objects["pod"].shape, st.poses["pod"]),
        transform_polygon(task.objects["machine"].shape, st.poses["machine"]),
    )
    assert d == pytest.approx(expect)
    held = replace(
        st, poses={"machine": st.poses["machine"]}, gripper=True,
        held=("pod", Pose2(0.1, 0.0, 0.0)),
    )
    assert world.object_pose(held, "pod").almost_equal(
        world.ee_pose(held).compose(Pose2(0.1, 0.0, 0.0)), 1e-12, 1e-12
    )
