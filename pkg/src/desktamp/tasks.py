"""Task definitions: geometry plus symbolic problem, loaded from .tamp files.

A task file holds a (domain ...) form and a (problem ...) form. The problem's
object entries carry geometry::

    (objects
      (stand (shape box 0.24 0.24) (fixed) (at 1.9 -0.6 0))
      (frame (shape box 0.16 0.16) (region 0.9 1.3 0.7 1.1 0 0)))

plus task-level forms::

    (attach (frame stand (pose 0 0.24 0)))   ; child parent relative-pose
    (obstacles (box 0.5 0.5 0.2 0.2 0))      ; cx cy w h theta
    (conf 2.2 0.5 0.3)                        ; initial configuration

Objects are sampled uniformly inside their (region xlo xhi ylo yhi thlo thhi)
at session start; (at x y th) pins them. The handle is the point the gripper
latches onto, default top-center of the shape.
"""
from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sexp
from .geom import Pose2, box
from .lang import DomainSpec, LangError, ProblemSpec, parse_domain, parse_problem

BUILTIN_TASKS = ("tool-hang-2d", "stack-three-2d", "coffee-2d", "tool-hang-2d-broad")


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    shape: np.ndarray                  # convex CCW vertices in object frame
    fixed: bool = False
    pose: Pose2 | None = None          # pinned initial pose
    region: tuple[float, ...] | None = None  # xlo xhi ylo yhi thlo thhi
    handle: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class AttachSpec:
    child: str
    parent: str
    rel: Pose2                          # child pose in the parent frame
    tol_p: float | None = None          # per-pair overrides, else world defaults
    tol_th: float | None = None


@dataclass(frozen=True)
class TaskSpec:
    name: str
    domain: DomainSpec
    problem: ProblemSpec
    objects: dict[str, ObjectSpec]
    attach_specs: tuple[AttachSpec, ...]
    obstacles: tuple[np.ndarray, ...]
    init_conf: tuple[float, ...]
    declared_grasps: dict[str, tuple[Pose2, ...]] = field(default_factory=dict)

    def attach_for(self, child: str, parent: str) -> AttachSpec | None:
        for a in self.attach_specs:
            if a.child == child and a.parent == parent:
                return a
        return None

    def attach_pairs(self) -> tuple[tuple[str, str], ...]:
        return tuple((a.child, a.parent) for a in self.attach_specs)


def _find(forms: list, key: str) -> list | None:
    for f in forms:
        if isinstance(f, list) and f and f[0] == key:
            return f[1:]
    return None


def _parse_shape(form) -> np.ndarray:
    if form[0] == "box":
        return box(float(form[1]), float(form[2]))
    if form[0] == "poly":
        return np.array([[float(p[0]), float(p[1])] for p in form[1:]])
    raise LangError(f"unknown shape {form!r}")


def _parse_object(name: str, props: list) -> ObjectSpec:
    shape_form = _find(props, "shape")
    if shape_form is None:
        raise LangError(f"object {name} has no shape")
    shape = _parse_shape(shape_form)
    fixed = any(isinstance(p, list) and p[:1] == ["fixed"] for p in props)
    at = _find(props, "at")
    region = _find(props, "region")
    pose = Pose2(float(at[0]), float(at[1]), float(at[2])) if at else None
    reg = None
    if region is not None:
        vals = [float(v) for v in region]
        if len(vals) == 4:
            vals += [0.0, 0.0]
        if len(vals) != 6:
            raise LangError(f"region of {name} needs 4 or 6 numbers")
        reg = tuple(vals)
    if pose is None and reg is None:
        raise LangError(f"object {name} needs (at ...) or (region ...)")
    handle_form = _find(props, "handle")
    if handle_form is not None:
        handle = (float(handle_form[0]), float(handle_form[1]))
    else:
        # default: just above the topmost edge, where a gripper can reach
        handle = (0.0, float(shape[:, 1].max()) + 0.01)
    return ObjectSpec(name, shape, fixed, pose, reg, handle)


def load_task_text(text: str, name: str = "") -> TaskSpec:
    forms = sexp.parse_all(text)
    dom_form = next((f for f in forms if f[:1] == ["domain"]), None)
    prob_form = next((f for f in forms if f[:1] == ["problem"]), None)
    if dom_form is None or prob_form is None:
        raise LangError("task file needs both (domain ...) and (problem ...)")
    domain = parse_domain(dom_form)
    problem = parse_problem(prob_form, domain)
    if problem.domain != domain.name:
        raise LangError(
            f"problem references domain {problem.domain!r}, file has {domain.name!r}"
        )

    objects = {
        oname: _parse_object(oname, props)
        for oname, props in problem.object_forms.items()
    }

    attach_specs = []
    attach_form = _find(list(problem.extra_forms), "attach")
    for entry in attach_form or []:
        child, parent = str(entry[0]), str(entry[1])
        if child not in objects or parent not in objects:
            raise LangError(f"attach pair ({child} {parent}) names unknown objects")
        pose_form = _find(entry[2:], "pose")
        rel = Pose2(float(pose_form[0]), float(pose_form[1]), float(pose_form[2]))
        tol_form = _find(entry[2:], "tol")
        tol_p = float(tol_form[0]) if tol_form else None
        tol_th = float(tol_form[1]) if tol_form else None
        attach_specs.append(AttachSpec(child, parent, rel, tol_p, tol_th))

    obstacles = []
    for ob in _find(list(problem.extra_forms), "obstacles") or []:
        if ob[0] == "box":
            verts = box(float(ob[3]), float(ob[4]))
            pose = Pose2(float(ob[1]), float(ob[2]), float(ob[5]) if len(ob) > 5 else 0.0)
            c, s = math.cos(pose.theta), math.sin(pose.theta)
            rot = np.array([[c, -s], [s, c]])
            obstacles.append(verts @ rot.T + np.array([pose.x, pose.y]))
        elif ob[0] == "poly":
            obstacles.append(np.array([[float(p[0]), float(p[1])] for p in ob[1:]]))
        else:
            raise LangError(f"unknown obstacle {ob!r}")

    conf_form = _find(list(problem.extra_forms), "conf")
    init_conf = tuple(float(v) for v in conf_form) if conf_form else (2.2, 0.5, 0.3)

    declared = {}
    for entry in _find(list(problem.extra_forms), "grasps") or []:
        oname = str(entry[0])
        poses = tuple(
            Pose2(float(g[1]), float(g[2]), float(g[3]))
            for g in entry[1:]
            if isinstance(g, list) and g[:1] == ["pose"]
        )
        declared[oname] = poses

    return TaskSpec(
        name or problem.name,
        domain,
        problem,
        objects,
        tuple(attach_specs),
        tuple(obstacles),
        init_conf,
        declared,
    )


def builtin_task_path(name: str) -> Path:
    fname = name.replace("-", "_") + ".tamp"
    ref = importlib.resources.files("desktamp") / "tasks" / fname
    return Path(str(ref))


def load_task(name_or_path: str) -> TaskSpec:
    path = Path(name_or_path)
    if not path.exists():
        if name_or_path in BUILTIN_TASKS:
            path = builtin_task_path(name_or_path)
        else:
            raise FileNotFoundError(
                f"no task file {name_or_path!r} and no builtin of that name; "
                f"builtins: {', '.join(BUILTIN_TASKS)}"
            )
    return load_task_text(path.read_text(), name=name_or_path if not Path(name_or_path).exists() else path.stem.replace("_", "-"))
