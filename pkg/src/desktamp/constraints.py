"""Constraint sets learned from demonstrations.

From each demonstration of an attachment, take the first state (scanning
backward from the first in-tolerance attach state) where the robot holds
the child and the child/parent polygons are at least `delta` apart. That
state's child-in-parent relative pose joins the pre-attach set, and the
child-in-gripper relative pose at the same tick joins the grasp set.
Sampling is uniform over each set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arm as arm_mod
from . import sexp
from .config import WorldParams
from .episode import Episode, StateSnap
from .geom import Pose2, polygon_distance, transform_polygon
from .tasks import TaskSpec


@dataclass(frozen=True)
class PreAttachSet:
    child: str
    parent: str
    poses: tuple[Pose2, ...]


@dataclass(frozen=True)
class GraspSet:
    obj: str
    grasps: tuple[Pose2, ...]


@dataclass
class ConstraintDB:
    task: str
    delta: float
    preattach: dict[tuple[str, str], PreAttachSet] = field(default_factory=dict)
    grasps: dict[str, GraspSet] = field(default_factory=dict)

    def sample_preattach(self, child: str, parent: str, rng) -> Pose2:
        s = self.preattach[(child, parent)]
        return s.poses[int(rng.integers(len(s.poses)))]

    def sample_grasp(self, obj: str, rng) -> Pose2:
        s = self.grasps[obj]
        return s.grasps[int(rng.integers(len(s.grasps)))]

    def has_preattach(self, child: str, parent: str) -> bool:
        return (child, parent) in self.preattach and bool(
            self.preattach[(child, parent)].poses
        )

    def has_grasp(self, obj: str) -> bool:
        return obj in self.grasps and bool(self.grasps[obj].grasps)


def _object_pose(snap: StateSnap, name: str, params: WorldParams) -> Pose2 | None:
    if snap.held is not None and snap.held[0] == name:
        return arm_mod.fk(params.arm, np.array(snap.config)).compose(snap.held[1])
    return snap.poses.get(name)


def _good_attach_snap(
    snap: StateSnap, task: TaskSpec, params: WorldParams, child: str, parent: str
) -> bool:
    spec = task.attach_for(child, parent)
    cp = _object_pose(snap, child, params)
    pp = _object_pose(snap, parent, params)
    if spec is None or cp is None or pp is None:
        return False
    tol_p = spec.tol_p if spec.tol_p is not None else params.eps_p
    tol_th = spec.tol_th if spec.tol_th is not None else params.eps_th
    return cp.relative_to(pp).almost_equal(spec.rel, tol_p, tol_th)


def _separation(
    snap: StateSnap, task: TaskSpec, params: WorldParams, child: str, parent: str
) -> float:
    cp = _object_pose(snap, child, params)
    pp = _object_pose(snap, parent, params)
    cv = transform_polygon(task.objects[child].shape, cp)
    pv = transform_polygon(task.objects[parent].shape, pp)
    return polygon_distance(cv, pv)


def precontact_index(
    ep: Episode, task: TaskSpec, params: WorldParams, child: str, parent: str,
    delta: float,
) -> int | None:
    """Index of the pre-contact state for (child, parent), or None.

    Finds the first step whose state is inside the attach tolerance, then
    walks backward to the nearest earlier step where the child is held and
    the polygons are at least delta apart.
    """
    first_good = None
    for i, step in enumerate(ep.steps):
        if _good_attach_snap(step.state, task, params, child, parent):
            first_good = i
            break
    if first_good is None:
        return None
    for i in range(first_good, -1, -1):
        snap = ep.steps[i].state
        if snap.held is None or snap.held[0] != child:
            continue
        if _separation(snap, task, params, child, parent) >= delta:
            return i
    return None


def extract_preattach(
    episodes: list[Episode], task: TaskSpec, params: WorldParams, delta: float
) -> dict[tuple[str, str], PreAttachSet]:
    out: dict[tuple[str, str], list[Pose2]] = {
        (a.child, a.parent): [] for a in task.attach_specs
    }
    for ep in episodes:
        for child, parent in out:
            i = precontact_index(ep, task, params, child, parent, delta)
            if i is None:
                continue
            snap = ep.steps[i].state
            rel = _object_pose(snap, child, params).relative_to(
                _object_pose(snap, parent, params)
            )
            out[(child, parent)].append(rel)
    return {
        k: PreAttachSet(k[0], k[1], tuple(v)) for k, v in out.items()
    }


def extract_grasps(
    episodes: list[Episode], task: TaskSpec, params: WorldParams, delta: float
) -> dict[str, GraspSet]:
    out: dict[str, list[Pose2]] = {a.child: [] for a in task.attach_specs}
    for ep in episodes:
        for spec in task.attach_specs:
            i = precontact_index(ep, task, params, spec.child, spec.parent, delta)
            if i is None:
                continue
            snap = ep.steps[i].state
            ee = arm_mod.fk(params.arm, np.array(snap.config))
            g = ee.invert().compose(_object_pose(snap, spec.child, params))
            out[spec.child].append(g)
    return {k: GraspSet(k, tuple(v)) for k, v in out.items()}


def learn(
    episodes: list[Episode], task: TaskSpec, params: WorldParams, delta: float
) -> ConstraintDB:
    db = ConstraintDB(task.name, delta)
    db.preattach = extract_preattach(episodes, task, params, delta)
    db.grasps = extract_grasps(episodes, task, params, delta)
    return db


# -- persistence -------------------------------------------------------------


def _pose_form(p: Pose2) -> list:
    return ["pose", p.x, p.y, p.theta]


def save(db: ConstraintDB, path: str | Path) -> None:
    form: list = ["constraints", ["task", db.task], ["delta", db.delta]]
    for (child, parent), s in sorted(db.preattach.items()):
        form.append(["preattach", child, parent, *[_pose_form(p) for p in s.poses]])
    for obj, s in sorted(db.grasps.items()):
        form.append(["grasps", obj, *[_pose_form(g) for g in s.grasps]])
    Path(path).write_text(sexp.dumps(form) + "\n")


def load(path: str | Path) -> ConstraintDB:
    form = sexp.parse_one(Path(path).read_text())
    if form[:1] != ["constraints"]:
        raise ValueError(f"{path}: not a constraints file")
    task = ""
    delta = 0.0
    preattach = {}
    grasps = {}
    for item in form[1:]:
        if item[0] == "task":
            task = str(item[1])
        elif item[0] == "delta":
            delta = float(item[1])
        elif item[0] == "preattach":
            child, parent = str(item[1]), str(item[2])
            poses = tuple(Pose2(float(p[1]), float(p[2]), float(p[3])) for p in item[3:])
            preattach[(child, parent)] = PreAttachSet(child, parent, poses)
        elif item[0] == "grasps":
            obj = str(item[1])
            gs = tuple(Pose2(float(p[1]), float(p[2]), float(p[3])) for p in item[2:])
            grasps[obj] = GraspSet(obj, gs)
    db = ConstraintDB(task, delta)
    db.preattach = preattach
    db.grasps = grasps
    return db
