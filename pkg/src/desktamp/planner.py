"""Hybrid symbolic-geometric planner.

Two phases. Skeleton search runs breadth-first over action schemata using
fluent preconditions/effects only, with continuous parameters as tagged
symbols: `const` values exist now, `wild` values are move destinations not
yet pinned down, `outcome` values belong to a delegated action. A
kinematics-determined parameter (the Kin output) may only bind to an
unconsumed wild symbol, which is what forces a move in front of every
pick/place/attach and keeps redundant move chains out of the search
(two moves in a row collapse to one state under canonical renaming).

Binding then walks the skeleton left to right. Each move owns the sampler
choice point of the action that consumes its destination: sample that
action's grasp/pose values, solve IK for its kinematic constraint, then
motion-plan the move, retrying with fresh samples on failure and
backtracking across earlier moves when a suffix cannot be completed.
Values downstream of a delegated action's outcome stay DEFERRED.
"""
from __future__ import annotations

import itertools
import math
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import arm as arm_mod
from .config import PlannerParams
from .constraints import ConstraintDB
from .geom import Pose2
from .lang import ActionSchema, DomainSpec, Formula, Literal
from .tasks import TaskSpec
from .world import Observation, World

# Static constraint families. A "determined" constraint computes its output
# from the remaining arguments, a "region" constraint admits a sampleable
# set, anything else is a pure test.
DETERMINED_OUT = {"Kin": 0, "Motion": 1, "GoodAttach": 1, "HumanAttach": 2}
REGION_OUT = {"Grasp": 1, "AttachGrasp": 1, "Pose": 1, "PreAttach": 1}


class PlanError(Exception):
    pass


class NoSkeleton(PlanError):
    pass


class BindingExhausted(PlanError):
    def __init__(self, constraint: str, msg: str = ""):
        super().__init__(msg or f"could not bind constraint {constraint}")
        self.constraint = constraint


class Unreachable(PlanError):
    pass


class PlanTimeout(PlanError):
    pass


class Deferred:
    """Sentinel for values downstream of a delegated action's outcome."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "DEFERRED"


DEFERRED = Deferred()


@dataclass(frozen=True)
class Sym:
    id: int
    tag: str  # const | wild | outcome

    def __repr__(self):
        return f"{self.tag[0]}{self.id}"


@dataclass(frozen=True)
class SkeletonStep:
    schema: ActionSchema
    assignment: dict[str, object]  # var -> object name (str) or Sym
    consumes: dict[str, Sym]       # conf vars whose Kin claimed a wild symbol

    @property
    def name(self) -> str:
        return self.schema.name

    def objects(self) -> tuple[str, ...]:
        return tuple(
            self.assignment[v] for v, t in self.schema.params if t == "obj"
        )


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple[tuple[float, ...], ...]

    def __len__(self):
        return len(self.waypoints)

    def joint_length(self) -> float:
        total = 0.0
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            total += float(np.linalg.norm(np.subtract(b, a)))
        return total


@dataclass(frozen=True)
class BoundStep:
    schema: str
    kind: str  # move | pick | place | attach
    human: bool
    params: tuple[tuple[str, str], ...]
    assignment: dict[str, object]  # var -> object name, value, or DEFERRED
    objects: tuple[str, ...]

    def all_of(self, typ: str) -> list:
        return [self.assignment[v] for v, t in self.params if t == typ]

    def first(self, typ: str):
        for v, t in self.params:
            if t == typ:
                return self.assignment[v]
        raise KeyError(f"{self.schema} has no {typ} parameter")


@dataclass(frozen=True)
class BoundPlan:
    steps: tuple[BoundStep, ...]
    seed: int

    @property
    def first_human_index(self) -> int | None:
        for i, s in enumerate(self.steps):
            if s.human:
                return i
        return None

    def skeleton(self) -> list[tuple[str, ...]]:
        return [(s.schema, *s.objects) for s in self.steps]

    def to_sexp(self) -> str:
        from . import sexp

        def val_form(v):
            if v is DEFERRED:
                return "deferred"
            if isinstance(v, str):
                return v
            if isinstance(v, Pose2):
                return ["pose", v.x, v.y, v.theta]
            if isinstance(v, Trajectory):
                return ["traj", *[["q", *map(float, w)] for w in v.waypoints]]
            return ["q", *map(float, np.asarray(v))]

        form: list = ["plan", ["seed", self.seed]]
        for i, s in enumerate(self.steps):
            entry: list = ["step", i, [s.schema, *s.objects]]
            if s.human:
                entry.append(":human")
            for var, v in s.assignment.items():
                if isinstance(v, str):
                    continue
                entry.append([var.lstrip("?"), val_form(v)])
            form.append(entry)
        return sexp.dumps(form) + "\n"


# --------------------------------------------------------------------------
# skeleton search


def _init_atoms(obs: Observation, counter):
    """Ground atoms plus the symbol -> value table from an observation."""
    values: dict[Sym, object] = {}
    atoms: set[tuple] = set()
    conf = Sym(next(counter), "const")
    values[conf] = np.array(obs.config, dtype=float)
    atoms.add(("AtConf", (conf,)))
    for name, pose in obs.poses.items():
        s = Sym(next(counter), "const")
        values[s] = pose
        atoms.add(("AtPose", (name, s)))
    if obs.held is not None:
        s = Sym(next(counter), "const")
        values[s] = obs.held[1]
        atoms.add(("AtGrasp", (obs.held[0], s)))
    else:
        atoms.add(("Empty", ()))
    for child, parent in obs.attachments:
        atoms.add(("Attached", (child, parent)))
    return frozenset(atoms), values


def _canon(atoms: frozenset, consumed: frozenset) -> tuple:
    """State signature invariant under symbol renaming."""

    def arg_key(a):
        return ("sym",) if isinstance(a, Sym) else ("obj", a)

    ordered = sorted(atoms, key=lambda at: (at[0], tuple(map(arg_key, at[1]))))
    rename: dict[Sym, int] = {}
    out = []
    for pred, args in ordered:
        row: list = [pred]
        for a in args:
            if isinstance(a, Sym):
                if a not in rename:
                    rename[a] = len(rename)
                row.append((rename[a], a.tag, a in consumed))
            else:
                row.append(a)
        out.append(tuple(row))
    return tuple(out)


def _goal_holds(atoms: frozenset, goal: Formula) -> bool:
    def matches(lit: Literal) -> bool:
        for pred, args in atoms:
            if pred != lit.pred or len(args) != len(lit.args):
                continue
            ok = True
            for want, have in zip(lit.args, args):
                if want == "*":
                    continue
                if isinstance(have, Sym) or want != have:
                    ok = False
                    break
            if ok:
                return True
        return False

    for lit in goal:
        if lit.positive != matches(lit):
            return False
    return True


def _object_candidates(schema: ActionSchema, task: TaskSpec) -> list[dict[str, str]]:
    """Object-variable assignments for one schema, in declaration order."""
    obj_vars = [v for v, t in schema.params if t == "obj"]
    if not obj_vars:
        return [{}]
    pair_lit = next(
        (l for l in schema.con if l.pred in ("PreAttach", "GoodAttach")), None
    )
    if pair_lit is not None:
        child_var, parent_var = pair_lit.args[0], pair_lit.args[2]
        return [{child_var: c, parent_var: p} for c, p in task.attach_pairs()]
    graspy = any(l.pred in ("Grasp", "AttachGrasp") for l in schema.con)
    pool = [
        o for o in task.problem.objects if not (graspy and task.objects[o].fixed)
    ]
    return [
        dict(zip(obj_vars, combo))
        for combo in itertools.product(pool, repeat=len(obj_vars))
    ]


def _apply_schema(schema, obj_binding, atoms, consumed, counter):
    """One schema application; (step, atoms', consumed') or None."""
    binding: dict[str, object] = dict(obj_binding)
    by_pred: dict[str, list] = {}
    for pred, args in atoms:
        by_pred.setdefault(pred, []).append(args)

    for lit in schema.pre:
        hit = None
        for args in by_pred.get(lit.pred, []):
            ok = True
            trial: dict[str, object] = {}
            for a, have in zip(lit.args, args):
                want = binding.get(a, a)
                if isinstance(want, str) and want.startswith("?"):
                    trial[want] = have
                elif want != have:
                    ok = False
                    break
            if ok:
                hit = trial
                break
        if hit is None:
            return None
        binding.update(hit)

    out_vars: dict[str, str] = {}
    for lit in schema.con:
        if lit.pred in DETERMINED_OUT:
            out_vars[lit.args[DETERMINED_OUT[lit.pred]]] = "determined"
        elif lit.pred in REGION_OUT:
            out_vars.setdefault(lit.args[REGION_OUT[lit.pred]], "region")

    consumes: dict[str, Sym] = {}
    newly = []
    for var, kind in out_vars.items():
        if kind != "determined" or var not in binding:
            continue
        sym = binding[var]
        if not isinstance(sym, Sym) or sym.tag != "wild" or sym in consumed:
            return None
        consumes[var] = sym
        newly.append(sym)

    eff_vars = {a for l in schema.eff for a in l.args if a.startswith("?")}
    for var, _typ in schema.params:
        if var in binding:
            continue
        if schema.human and var in eff_vars and out_vars.get(var) == "determined":
            tag = "outcome"
        elif var in eff_vars and var not in out_vars:
            tag = "wild"
        else:
            tag = "const"
        binding[var] = Sym(next(counter), tag)

    new_atoms = set(atoms)
    for lit in schema.eff:
        if not lit.positive:
            args = tuple(binding.get(a, a) for a in lit.args)
            new_atoms.discard((lit.pred, args))
    for lit in schema.eff:
        if lit.positive:
            args = tuple(binding.get(a, a) for a in lit.args)
            new_atoms.add((lit.pred, args))

    step = SkeletonStep(schema, binding, consumes)
    return step, frozenset(new_atoms), consumed | frozenset(newly)


def skeleton_search(
    domain: DomainSpec,
    task: TaskSpec,
    init_atoms: frozenset,
    goal: Formula,
    depth_bound: int,
    counter=None,
) -> list[SkeletonStep]:
    if counter is None:
        counter = itertools.count(start=10_000)
    if _goal_holds(init_atoms, goal):
        return []
    start = (init_atoms, frozenset())
    seen = {_canon(*start)}
    queue = deque([(start, ())])
    candidates = {s.name: _object_candidates(s, task) for s in domain.schemas}
    while queue:
        (atoms, consumed), steps = queue.popleft()
        if len(steps) >= depth_bound:
            continue
        for schema in domain.schemas:
            for obj_binding in candidates[schema.name]:
                res = _apply_schema(schema, obj_binding, atoms, consumed, counter)
                if res is None:
                    continue
                step, natoms, nconsumed = res
                nsteps = steps + (step,)
                if _goal_holds(natoms, goal):
                    return list(nsteps)
                key = _canon(natoms, nconsumed)
                if key not in seen:
                    seen.add(key)
                    queue.append(((natoms, nconsumed), nsteps))
    raise NoSkeleton(f"no skeleton within depth {depth_bound}")


# --------------------------------------------------------------------------
# geometric solvers


def solve_kin(
    world: World,
    grasp: Pose2,
    target: Pose2,
    poses: dict[str, Pose2],
    held_obj: str | None,
    rng,
    params: PlannerParams,
    q_seed=None,
):
    """Configuration placing the grasped frame at `target`: f(q) = target o g^-1.

    Seeds damped least squares from the current configuration first, then
    random draws, rejecting colliding solutions. Raises Unreachable when no
    seed yields a collision-free solution.
    """
    wp = world.params
    grip_target = target.compose(grasp.invert())
    # exact workspace test: the wrist (gripper point minus the last link)
    # must lie in the annulus the first two links can reach
    l1, l2, l3 = wp.arm.link_lengths
    wx = grip_target.x - l3 * math.cos(grip_target.theta)
    wy = grip_target.y - l3 * math.sin(grip_target.theta)
    wr = math.hypot(wx, wy)
    if wr > l1 + l2 or wr < abs(l1 - l2):
        raise Unreachable(f"gripper target {grip_target} beyond reach")
    held = (held_obj, grasp) if held_obj is not None else None
    # both analytic elbow branches first, nearest the seed config when given
    branches = arm_mod.ik_exact(wp.arm, grip_target)
    if q_seed is not None and len(branches) == 2:
        branches.sort(key=lambda q: float(np.linalg.norm(q - np.asarray(q_seed))))
    for q in branches:
        if not world.config_collides(q, poses, held):
            return q
    seeds = list(
        rng.uniform(wp.arm.joint_low, wp.arm.joint_high, size=(params.ik_seeds, 3))
    )
    if q_seed is not None:
        seeds.insert(0, np.asarray(q_seed, dtype=float))
    for seed in seeds:
        q = arm_mod.solve_ik(
            wp.arm, grip_target, [seed], wp.ik_damping, wp.ik_iters, wp.ik_tol
        )
        if q is None:
            continue
        if not world.config_collides(q, poses, held):
            return q
    raise Unreachable(f"no collision-free IK solution for {grip_target}")


# No point on the arm, or on a held object, moves faster than this many
# workspace units per radian of joint motion (links 1+1+1, small payloads).
_SWEEP_LIP = 6.0
# Segments shorter than this pass on their endpoint checks alone (rad).
_GAP_FLOOR = 1e-3


def _edge_free(world, qa, qb, poses, held) -> bool:
    """Certify a straight joint-space segment collision-free.

    Conservative advancement: clearance c at a config clears a joint-space
    ball of radius c / _SWEEP_LIP around it, so a segment is free once its
    endpoint balls cover it. Bisect otherwise. Fixed-resolution sampling
    misses grazing contacts that this certificate cannot.
    """
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    ca = world.config_clearance(qa, poses, held)
    if ca <= 1e-9:
        return False
    cb = world.config_clearance(qb, poses, held)
    if cb <= 1e-9:
        return False
    stack = [(qa, qb, ca, cb)]
    while stack:
        a, b, c_a, c_b = stack.pop()
        d = float(np.linalg.norm(b - a))
        if d * _SWEEP_LIP <= c_a + c_b or d <= _GAP_FLOOR:
            continue
        m = (a + b) * 0.5
        c_m = world.config_clearance(m, poses, held)
        if c_m <= 1e-9:
            return False
        stack.append((a, m, c_a, c_m))
        stack.append((m, b, c_m, c_b))
    return True


class _Tree:
    """Append-only RRT tree with a contiguous coordinate buffer."""

    __slots__ = ("nodes", "parents", "arr")

    def __init__(self, root):
        self.nodes = [np.asarray(root, dtype=float)]
        self.parents = [-1]
        self.arr = np.empty((256, 3))
        self.arr[0] = root

    def nearest(self, q) -> int:
        d = np.linalg.norm(self.arr[: len(self.nodes)] - q, axis=1)
        return int(np.argmin(d))

    def add(self, q, parent: int) -> int:
        if len(self.nodes) == len(self.arr):
            self.arr = np.vstack([self.arr, np.empty_like(self.arr)])
        self.nodes.append(q)
        self.parents.append(parent)
        self.arr[len(self.nodes) - 1] = q
        return len(self.nodes) - 1

    def path_from_root(self, i: int) -> list:
        out = []
        while i >= 0:
            out.append(self.nodes[i])
            i = self.parents[i]
        out.reverse()
        return out


def motion_plan(
    world: World,
    q_from,
    q_to,
    poses: dict[str, Pose2],
    held: tuple[str, Pose2] | None,
    rng,
    params: PlannerParams,
) -> Trajectory | None:
    """Straight-line interpolation, falling back to bidirectional RRT.

    The fallback grows one tree from each endpoint (RRT-Connect). Goal
    configurations often sit in pockets narrower than one extension step,
    near an object the arm is about to touch; a tree rooted inside the
    pocket walks out of it with validated short edges, which a single
    forward tree can effectively never enter. Returns None when stuck.
    """
    q1 = np.asarray(q_from, dtype=float)
    q2 = np.asarray(q_to, dtype=float)
    if world.config_collides(q1, poses, held) or world.config_collides(
        q2, poses, held
    ):
        return None
    direct = float(np.linalg.norm(q2 - q1))
    n = max(1, int(math.ceil(direct / params.rrt_step)))
    line = [q1 + (q2 - q1) * (i / n) for i in range(n + 1)]
    if _edge_free(world, q1, q2, poses, held):
        return Trajectory(tuple(tuple(map(float, q)) for q in line))

    # the join point decides the route's homotopy class, and shortcutting
    # cannot leave one; a couple of restarts beat one long optimization
    best = None
    best_len = math.inf
    for _ in range(3):
        path = _rrt_connect(world, q1, q2, poses, held, rng, params)
        if path is None:
            continue
        path = _shortcut(world, path, poses, held, rng)
        plen = sum(float(np.linalg.norm(b - a)) for a, b in zip(path, path[1:]))
        if plen < best_len:
            best, best_len = path, plen
        if best_len <= 2.0 * direct + 0.5:
            break
    if best is None:
        return None
    return Trajectory(tuple(tuple(map(float, q)) for q in best))


def _rrt_connect(world, q1, q2, poses, held, rng, params) -> list | None:
    lo, hi = world.params.arm.joint_low, world.params.arm.joint_high
    step = params.rrt_step
    ta, tb = _Tree(q1), _Tree(q2)
    a_is_start = True
    for _ in range(params.rrt_iters):
        if rng.random() < params.rrt_goal_bias:
            target = tb.nodes[0]
        else:
            target = rng.uniform(lo, hi, 3)
        ni = ta.nearest(target)
        qn = ta.nodes[ni]
        d = float(np.linalg.norm(target - qn))
        if d >= 1e-9:
            qnew = np.clip(qn + (target - qn) * min(step, d) / d, lo, hi)
            if _edge_free(world, qn, qnew, poses, held):
                ia = ta.add(qnew, ni)
                # march the other tree toward the new node until blocked
                nj = tb.nearest(qnew)
                qc = tb.nodes[nj]
                joined = False
                for _ in range(64):
                    dd = float(np.linalg.norm(qnew - qc))
                    if dd <= step:
                        joined = _edge_free(world, qc, qnew, poses, held)
                        break
                    qstep = qc + (qnew - qc) * (step / dd)
                    if not _edge_free(world, qc, qstep, poses, held):
                        break
                    nj = tb.add(qstep, nj)
                    qc = qstep
                if joined:
                    pa = ta.path_from_root(ia)
                    pb = tb.path_from_root(nj)
                    return pa + pb[::-1] if a_is_start else pb + pa[::-1]
        ta, tb, a_is_start = tb, ta, not a_is_start
    return None


def _shortcut(world, path, poses, held, rng, tries: int = 64):
    """Splice out detours wherever a direct validated edge exists."""
    pts = list(path)
    for _ in range(tries):
        if len(pts) < 3:
            break
        i = int(rng.integers(0, len(pts) - 2))
        j = int(rng.integers(i + 2, len(pts)))
        if _edge_free(world, pts[i], pts[j], poses, held):
            del pts[i + 1 : j]
    return pts


# --------------------------------------------------------------------------
# binding


class _UnknownConf:
    """Arm configuration after a delegated action, before replanning."""

    def __repr__(self):
        return "POST-DELEGATION-CONF"


_UNKNOWN = _UnknownConf()


@dataclass
class _VWorld:
    """Virtual geometric state threaded through binding."""

    poses: dict[str, Pose2]
    config: object  # np.ndarray or _UNKNOWN
    held: tuple[str, Pose2] | None
    attachments: tuple


def _classify(schema: ActionSchema) -> str:
    if any(l.pred == "Motion" for l in schema.con):
        return "move"
    if any(l.pred == "PreAttach" for l in schema.con):
        return "attach"
    if any(l.pred == "AtGrasp" and l.positive for l in schema.eff):
        return "pick"
    return "place"


class _Binder:
    def __init__(self, world, task, db, rng, params, values, deadline):
        self.world = world
        self.task = task
        self.db = db
        self.rng = rng
        self.params = params
        self.values = values  # Sym -> concrete value, Trajectory, or DEFERRED
        self.deadline = deadline
        self.fail_counts: dict[str, int] = {}
        self.last_unreachable: Unreachable | None = None

    def _tick(self):
        if time.monotonic() > self.deadline:
            raise PlanTimeout("binding exceeded the planning budget")

    def _fail(self, constraint: str):
        self.fail_counts[constraint] = self.fail_counts.get(constraint, 0) + 1

    def bind(self, steps: list[SkeletonStep], vw: _VWorld) -> bool:
        self.steps = steps
        self.consumer_of: dict[int, int] = {}
        for i, st in enumerate(steps):
            if _classify(st.schema) != "move":
                continue
            # the destination is the conf this move asserts, not its source,
            # which is also a wild symbol for any move after the first
            dest = None
            for lit in st.schema.eff:
                if lit.positive and lit.pred == "AtConf":
                    cand = st.assignment.get(lit.args[0])
                    if isinstance(cand, Sym) and cand.tag == "wild":
                        dest = cand
                    break
            if dest is None:
                continue
            for j in range(i + 1, len(steps)):
                if dest in steps[j].consumes.values():
                    self.consumer_of[i] = j
                    break
        return self._bind_from(0, vw)

    def _bind_from(self, i: int, vw: _VWorld) -> bool:
        if i == len(self.steps):
            return True
        st = self.steps[i]
        kind = _classify(st.schema)
        if kind == "move":
            return self._bind_move(i, vw)
        if kind == "pick":
            o = st.objects()[0]
            g = self._typed_value(st, "grasp")
            nposes = {n: p for n, p in vw.poses.items() if n != o}
            nvw = _VWorld(nposes, vw.config, (o, g), vw.attachments)
            return self._bind_from(i + 1, nvw)
        if kind == "attach":
            child, parent = st.objects()[0], st.objects()[-1]
            spec = self.task.attach_for(child, parent)
            opt = vw.poses[parent].compose(spec.rel)
            pose_var, conf_var = self._outcome_vars(st)
            self.values[st.assignment[pose_var]] = opt
            self.values[st.assignment[conf_var]] = DEFERRED
            nposes = dict(vw.poses)
            nposes[child] = opt
            nvw = _VWorld(
                nposes, _UNKNOWN, None, vw.attachments + ((child, parent),)
            )
            return self._bind_from(i + 1, nvw)
        # place: release at the pose sampled by the preceding move
        o = st.objects()[0]
        pose = self._typed_value(st, "pose")
        nposes = dict(vw.poses)
        nposes[o] = pose
        return self._bind_from(
            i + 1, _VWorld(nposes, vw.config, None, vw.attachments)
        )

    def _typed_value(self, st: SkeletonStep, typ: str):
        for v, t in st.schema.params:
            if t == typ:
                return self.values[st.assignment[v]]
        raise KeyError(f"{st.name} has no {typ} parameter")

    def _outcome_vars(self, st: SkeletonStep) -> tuple[str, str]:
        pose_var = conf_var = None
        for v, t in st.schema.params:
            val = st.assignment[v]
            if isinstance(val, Sym) and val.tag == "outcome":
                if t == "pose":
                    pose_var = v
                elif t == "conf":
                    conf_var = v
        return pose_var, conf_var

    def _region_sym(self, st: SkeletonStep, pred: str) -> Sym:
        for lit in st.schema.con:
            if lit.pred == pred:
                return st.assignment[lit.args[REGION_OUT[pred]]]
        raise KeyError(pred)

    def _bind_move(self, i: int, vw: _VWorld) -> bool:
        st = self.steps[i]
        q1 = None
        dest_sym = traj_sym = None
        for v, t in st.schema.params:
            sym = st.assignment[v]
            if t == "conf":
                if sym in self.values:
                    q1 = self.values[sym]
                else:
                    dest_sym = sym
            elif t == "traj":
                traj_sym = sym
        j = self.consumer_of.get(i)

        for _ in range(self.params.samples_per_var):
            self._tick()
            undo: list[Sym] = []
            try:
                q2 = self._sample_consumer(j, vw, undo)
            except Unreachable as e:
                self.last_unreachable = e
                self._fail("Kin")
                q2 = None
            if q2 is None:
                for s in undo:
                    del self.values[s]
                continue
            self.values[dest_sym] = q2
            undo.append(dest_sym)
            if vw.config is _UNKNOWN or q1 is DEFERRED:
                traj = DEFERRED
            else:
                traj = motion_plan(
                    self.world, q1, q2, vw.poses, vw.held, self.rng, self.params
                )
                if traj is None:
                    self._fail("Motion")
                    for s in undo:
                        del self.values[s]
                    continue
            self.values[traj_sym] = traj
            undo.append(traj_sym)
            nvw = _VWorld(vw.poses, q2, vw.held, vw.attachments)
            if self._bind_from(i + 1, nvw):
                return True
            for s in undo:
                del self.values[s]
        return False

    def _sample_consumer(self, j: int | None, vw: _VWorld, undo: list[Sym]):
        """Bind the consumer action's sampled values; returns its kin config."""
        if j is None:
            return None if vw.config is _UNKNOWN else np.asarray(vw.config)
        st = self.steps[j]
        kind = _classify(st.schema)
        q_seed = None if vw.config is _UNKNOWN else vw.config
        if kind == "pick":
            o = st.objects()[0]
            gsym = self._region_sym(st, "Grasp")
            if gsym not in self.values:
                self.values[gsym] = self._sample_grasp(o)
                undo.append(gsym)
            g = self.values[gsym]
            return solve_kin(
                self.world, g, vw.poses[o], vw.poses, None,
                self.rng, self.params, q_seed,
            )
        if kind == "attach":
            child, parent = st.objects()[0], st.objects()[-1]
            psym = self._region_sym(st, "PreAttach")
            if self.db is None or not self.db.has_preattach(child, parent):
                raise BindingExhausted(
                    "PreAttach",
                    f"no learned pre-attach set for ({child}, {parent})",
                )
            rel = self.db.sample_preattach(child, parent, self.rng)
            target = vw.poses[parent].compose(rel)
            self.values[psym] = target
            undo.append(psym)
            g = self._typed_value(st, "grasp")
            return solve_kin(
                self.world, g, target, vw.poses, child,
                self.rng, self.params, q_seed,
            )
        if kind == "place":
            o = st.objects()[0]
            psym = self._region_sym(st, "Pose")
            region = self.task.objects[o].region
            if region is None:
                raise BindingExhausted("Pose", f"{o} has no placement region")
            xlo, xhi, ylo, yhi, tlo, thi = region
            target = Pose2(
                float(self.rng.uniform(xlo, xhi)),
                float(self.rng.uniform(ylo, yhi)),
                float(self.rng.uniform(tlo, thi)),
            )
            self.values[psym] = target
            undo.append(psym)
            g = self._typed_value(st, "grasp")
            return solve_kin(
                self.world, g, target, vw.poses, o,
                self.rng, self.params, q_seed,
            )
        return None

    def _sample_grasp(self, o: str) -> Pose2:
        if self.db is not None and self.db.has_grasp(o):
            return self.db.sample_grasp(o, self.rng)
        declared = self.task.declared_grasps.get(o)
        if declared:
            return declared[int(self.rng.integers(len(declared)))]
        # canonical fallback: gripper tip on the declared handle, axes aligned
        hx, hy = self.task.objects[o].handle
        return Pose2(hx, hy, 0.0).invert()


def plan(
    world: World,
    obs: Observation,
    goal: Formula,
    db: ConstraintDB | None,
    seed: int,
    params: PlannerParams,
) -> BoundPlan:
    """Full planning query over a perceived state. Deterministic in seed."""
    task = world.task
    t0 = time.monotonic()
    counter = itertools.count()
    init_atoms, values = _init_atoms(obs, counter)
    steps = skeleton_search(
        task.domain, task, init_atoms, goal, params.skeleton_depth, counter
    )
    if time.monotonic() - t0 > params.timeout:
        raise PlanTimeout("skeleton search exceeded the planning budget")

    rng = np.random.default_rng(seed)
    binder = _Binder(world, task, db, rng, params, values, t0 + params.timeout)
    vw = _VWorld(dict(obs.poses), np.array(obs.config), obs.held, obs.attachments)
    if not binder.bind(steps, vw):
        if binder.fail_counts:
            worst = max(binder.fail_counts, key=binder.fail_counts.get)
            only_kin = set(binder.fail_counts) == {"Kin"}
            if worst == "Kin" and only_kin and binder.last_unreachable is not None:
                raise binder.last_unreachable
            raise BindingExhausted(worst)
        raise BindingExhausted("Kin", "no sampler produced a feasible value")

    bound = []
    for st in steps:
        assignment = {}
        for v, _t in st.schema.params:
            a = st.assignment[v]
            assignment[v] = values.get(a, a) if isinstance(a, Sym) else a
        bound.append(
            BoundStep(
                schema=st.schema.name,
                kind=_classify(st.schema),
                human=st.schema.human,
                params=st.schema.params,
                assignment=assignment,
                objects=st.objects(),
            )
        )
    return BoundPlan(tuple(bound), seed)
