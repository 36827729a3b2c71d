"""Dataclass parameter bundles and JSON file overrides.

Every tunable lives here with its default; experiment scripts and the CLI
construct these once and thread them through. `load_overrides` applies a
flat JSON object like {"world": {"grasp_tol": 0.08}, "gate": {...}}.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ArmParams:
    link_lengths: tuple[float, float, float] = (1.0, 1.0, 1.0)
    joint_low: float = -math.pi
    joint_high: float = math.pi


@dataclass(frozen=True)
class WorldParams:
    arm: ArmParams = field(default_factory=ArmParams)
    tick: float = 0.05          # seconds per control tick (20 Hz)
    max_step: float = 0.05      # end-effector translation bound per tick
    max_rot: float = 0.1        # end-effector rotation bound per tick (rad)
    grasp_tol: float = 0.05     # gripper tip to handle distance for latching
    eps_p: float = 0.02         # attach position tolerance
    eps_th: float = 0.1         # attach orientation tolerance (rad)
    ik_damping: float = 0.1
    ik_iters: int = 50
    ik_tol: float = 1e-3


@dataclass(frozen=True)
class NoiseParams:
    pos: float = 0.0            # uniform half-width on perceived x, y
    ang: float = 0.0            # uniform half-width on perceived theta


# Named perception-noise levels; positions in workspace units, angles in rad.
NOISE_LEVELS: dict[str, NoiseParams] = {
    "L0": NoiseParams(0.0, 0.0),
    "L1": NoiseParams(0.05, math.radians(5.0)),
    "L2": NoiseParams(0.10, math.radians(10.0)),
}


@dataclass(frozen=True)
class PlannerParams:
    skeleton_depth: int = 16
    samples_per_var: int = 50
    ik_seeds: int = 10
    rrt_step: float = 0.1       # joint-space extension step (rad, L2)
    rrt_goal_bias: float = 0.1
    rrt_iters: int = 5000
    timeout: float = 30.0       # seconds per plan() call


@dataclass(frozen=True)
class GateParams:
    step_cap: int = 600         # operator ticks per segment before timeout
    replan_cap: int = 10


@dataclass(frozen=True)
class LearnParams:
    delta: float = 0.05         # separation distance for pre-contact states
    knn_k: int = 5
    ridge_lambda: float = 1e-3


@dataclass(frozen=True)
class FleetParams:
    n_robot: int = 3
    horizon: float = 3600.0     # simulated seconds
    warmup: float = 300.0       # excluded from utilization stats
    duty_on: float = 0.0        # 0 disables the duty cycle
    duty_off: float = 0.0


@dataclass(frozen=True)
class Params:
    world: WorldParams = field(default_factory=WorldParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    gate: GateParams = field(default_factory=GateParams)
    learn: LearnParams = field(default_factory=LearnParams)
    fleet: FleetParams = field(default_factory=FleetParams)


def _replace_from(obj, patch: dict):
    kwargs = {}
    for f in dataclasses.fields(obj):
        if f.name not in patch:
            continue
        val = patch[f.name]
        cur = getattr(obj, f.name)
        if dataclasses.is_dataclass(cur) and isinstance(val, dict):
            val = _replace_from(cur, val)
        elif isinstance(cur, tuple) and isinstance(val, list):
            val = tuple(val)
        kwargs[f.name] = val
    unknown = set(patch) - {f.name for f in dataclasses.fields(obj)}
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(obj, **kwargs)


def load_overrides(params: Params, path: str) -> Params:
    """Return params with fields replaced from a JSON override file."""
    with open(path) as fh:
        patch = json.load(fh)
    return _replace_from(params, patch)
