"""Behavior cloning from operator-labeled ticks.

Features are egocentric: each object's pose expressed in the gripper frame
as (x, y, sin th, cos th) in task declaration order, then the gripper's own
world pose the same way, then the grip bit; 4n + 5 dimensions for n
objects. Targets are the recorded commands (dx, dy, dtheta, grip).

Training data comes only from ticks labeled "human". Two regressors: a
k-nearest-neighbor policy with inverse-distance weighting, and a ridge
regression solved in closed form. Policies are pickled as-is.
"""
from __future__ import annotations

import math
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import arm as arm_mod
from .config import ArmParams, LearnParams, NoiseParams, Params
from .episode import Episode, Step
from .geom import Pose2
from .tasks import TaskSpec
from .world import Observation, World


def feature_dim(task: TaskSpec) -> int:
    return 4 * len(task.problem.objects) + 5


def _pose_feats(p: Pose2) -> list[float]:
    return [p.x, p.y, math.sin(p.theta), math.cos(p.theta)]


def featurize(
    task: TaskSpec,
    arm: ArmParams,
    config,
    poses: dict[str, Pose2],
    held: tuple[str, Pose2] | None,
    gripper: bool,
) -> np.ndarray:
    """Feature vector from a pose map; the held object's pose is derived."""
    ee = arm_mod.fk(arm, np.asarray(config, dtype=float))
    vec: list[float] = []
    for name in task.problem.objects:
        if held is not None and held[0] == name:
            p = ee.compose(held[1])
        else:
            p = poses[name]
        vec.extend(_pose_feats(p.relative_to(ee)))
    vec.extend(_pose_feats(ee))
    vec.append(1.0 if gripper else 0.0)
    return np.array(vec)


def featurize_obs(
    task: TaskSpec, obs: Observation, arm: ArmParams | None = None
) -> np.ndarray:
    """Features over the perception channel (noisy poses, exact arm)."""
    return featurize(
        task, arm or ArmParams(), obs.config, obs.poses, obs.held, obs.gripper
    )


def featurize_step(task: TaskSpec, arm: ArmParams, step: Step) -> np.ndarray:
    """Features for a recorded tick, using the poses the operator saw."""
    return featurize(
        task,
        arm,
        step.state.config,
        step.observed_poses(),
        step.state.held,
        step.state.gripper,
    )


def training_arrays(
    task: TaskSpec, arm: ArmParams, episodes: list[Episode]
) -> tuple[np.ndarray, np.ndarray]:
    """(X, Y) from human-labeled ticks only."""
    xs, ys = [], []
    for ep in episodes:
        for step in ep.steps:
            if step.label != "human":
                continue
            xs.append(featurize_step(task, arm, step))
            ys.append(np.array(step.action, dtype=float))
    if not xs:
        raise ValueError("no human-labeled steps in the given episodes")
    return np.stack(xs), np.stack(ys)


class KNNPolicy:
    """Inverse-distance-weighted k-nearest-neighbor regression."""

    def __init__(self, k: int = 5):
        self.k = k
        self.x: np.ndarray | None = None
        self.y: np.ndarray | None = None
        self._tree: cKDTree | None = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "KNNPolicy":
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self._tree = cKDTree(self.x)
        return self

    def act(self, feats: np.ndarray) -> tuple[float, float, float, bool]:
        k = min(self.k, len(self.x))
        dist, idx = self._tree.query(feats, k=k)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        w = 1.0 / (dist + 1e-9)
        w /= w.sum()
        out = w @ self.y[idx]
        return float(out[0]), float(out[1]), float(out[2]), bool(out[3] > 0.5)

    # kd-trees do not pickle portably across scipy versions; rebuild on load
    def __getstate__(self):
        return {"k": self.k, "x": self.x, "y": self.y}

    def __setstate__(self, state):
        self.k = state["k"]
        self.x = state["x"]
        self.y = state["y"]
        self._tree = cKDTree(self.x) if self.x is not None else None


class RidgePolicy:
    """Linear map with an intercept, solved in closed form."""

    def __init__(self, lam: float = 1e-3):
        self.lam = lam
        self.w: np.ndarray | None = None  # (d + 1, 4)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RidgePolicy":
        xb = np.hstack([x, np.ones((len(x), 1))])
        a = xb.T @ xb + self.lam * np.eye(xb.shape[1])
        self.w = np.linalg.solve(a, xb.T @ y)
        return self

    def act(self, feats: np.ndarray) -> tuple[float, float, float, bool]:
        out = np.append(feats, 1.0) @ self.w
        return float(out[0]), float(out[1]), float(out[2]), bool(out[3] > 0.5)


def train_policy(
    task: TaskSpec,
    arm: ArmParams,
    episodes: list[Episode],
    learn: LearnParams,
    kind: str = "knn",
):
    x, y = training_arrays(task, arm, episodes)
    if kind == "knn":
        return KNNPolicy(k=learn.knn_k).fit(x, y)
    if kind == "ridge":
        return RidgePolicy(lam=learn.ridge_lambda).fit(x, y)
    raise ValueError(f"unknown policy kind {kind!r}")


def save_policy(policy, path: str | Path) -> None:
    with open(path, "wb") as fh:
        pickle.dump(policy, fh)


def load_policy(path: str | Path):
    with open(path, "rb") as fh:
        return pickle.load(fh)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalStats:
    rollouts: int
    successes: int
    tamp_failures: int    # planner/grasp failures, excluded from filtered SR
    operator_failures: int

    @property
    def kept(self) -> int:
        return self.rollouts - self.tamp_failures

    @property
    def filtered_sr(self) -> float:
        return self.successes / self.kept if self.kept else 0.0

    @property
    def raw_sr(self) -> float:
        return self.successes / self.rollouts if self.rollouts else 0.0

    @property
    def tamp_sr(self) -> float:
        return self.kept / self.rollouts if self.rollouts else 0.0


def evaluate_policy(
    world: World,
    task: TaskSpec,
    db,
    params: Params,
    policy,
    noise: NoiseParams,
    n_kept: int,
    seed0: int = 0,
    max_rollouts: int | None = None,
) -> tuple[EvalStats, list[Episode]]:
    """Roll the policy in the gated loop until n_kept rollouts survive the
    planner filter (i.e. are not planner or grasp failures)."""
    from .gate import PolicyOperator, run_gated

    cap = max_rollouts if max_rollouts is not None else 40 * n_kept
    operator = PolicyOperator(policy, task)
    episodes = []
    rollouts = successes = tamp_failures = op_failures = 0
    seed = seed0
    while rollouts - tamp_failures < n_kept and rollouts < cap:
        ep = run_gated(world, task, db, params, operator, seed, noise)
        episodes.append(ep)
        rollouts += 1
        if ep.outcome.tamp_failure:
            tamp_failures += 1
        elif ep.outcome.success:
            successes += 1
        else:
            op_failures += 1
        seed += 1
    return (
        EvalStats(rollouts, successes, tamp_failures, op_failures),
        episodes,
    )
