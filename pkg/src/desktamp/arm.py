"""Kinematics of the 3-link planar arm.

Configuration is a vector of joint angles; frame i points along the
cumulative angle sum(q[:i+1]). The end-effector pose stacks the link
contributions, so with unit links fk((0,0,0)) is (3, 0) facing +x.
"""
from __future__ import annotations

import math

import numpy as np

from .config import ArmParams
from .geom import Pose2, wrap_angle


def fk(arm: ArmParams, q) -> Pose2:
    """End-effector pose for joint angles q."""
    L = np.asarray(arm.link_lengths)
    cum = np.cumsum(q)
    x = float(L @ np.cos(cum))
    y = float(L @ np.sin(cum))
    return Pose2(x, y, wrap_angle(float(cum[-1])))


def joint_points(arm: ArmParams, q) -> np.ndarray:
    """Base plus every joint/tip point, shape (n_links + 1, 2)."""
    L = np.asarray(arm.link_lengths)
    cum = np.cumsum(q)
    steps = np.stack([L * np.cos(cum), L * np.sin(cum)], axis=1)
    pts = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
    return pts


def jacobian(arm: ArmParams, q) -> np.ndarray:
    """3xN analytic Jacobian of (x, y, theta) w.r.t. joint angles."""
    L = np.asarray(arm.link_lengths)
    cum = np.cumsum(q)
    n = len(L)
    J = np.ones((3, n))
    sin_terms = L * np.sin(cum)
    cos_terms = L * np.cos(cum)
    for j in range(n):
        J[0, j] = -np.sum(sin_terms[j:])
        J[1, j] = np.sum(cos_terms[j:])
    return J


def pose_error(target: Pose2, current: Pose2) -> np.ndarray:
    return np.array(
        [
            target.x - current.x,
            target.y - current.y,
            wrap_angle(target.theta - current.theta),
        ]
    )


def dls_step(arm: ArmParams, q, err: np.ndarray, damping: float) -> np.ndarray:
    """One damped-least-squares update toward reducing the task-space error."""
    J = jacobian(arm, q)
    JJt = J @ J.T + (damping**2) * np.eye(3)
    dq = J.T @ np.linalg.solve(JJt, err)
    return dq


def clamp_config(arm: ArmParams, q) -> np.ndarray:
    return np.clip(q, arm.joint_low, arm.joint_high)


def ik_exact(arm: ArmParams, target: Pose2) -> list[np.ndarray]:
    """Closed-form IK for the 3-link arm, zero to two elbow branches.

    Fixing the end-effector angle reduces the problem to two-link IK for the
    wrist point. Solutions outside the joint limits are dropped.
    """
    l1, l2, l3 = arm.link_lengths
    wx = target.x - l3 * math.cos(target.theta)
    wy = target.y - l3 * math.sin(target.theta)
    d2 = wx * wx + wy * wy
    c2 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if abs(c2) > 1.0:
        return []
    out = []
    for elbow in (1.0, -1.0):
        q2 = elbow * math.acos(max(-1.0, min(1.0, c2)))
        q1 = math.atan2(wy, wx) - math.atan2(
            l2 * math.sin(q2), l1 + l2 * math.cos(q2)
        )
        q3 = wrap_angle(target.theta - q1 - q2)
        q = np.array([wrap_angle(q1), wrap_angle(q2), q3])
        if np.all(q >= arm.joint_low) and np.all(q <= arm.joint_high):
            out.append(q)
    return out


def solve_ik(
    arm: ArmParams,
    target: Pose2,
    seeds,
    damping: float = 0.1,
    iters: int = 50,
    tol: float = 1e-3,
):
    """Iterative IK from one or more seed configurations.

    Returns the first configuration whose position and angle residuals both
    fall under tol, or None. Joint angles stay clamped inside limits.
    """
    reach = sum(arm.link_lengths)
    if math.hypot(target.x, target.y) > reach + 1e-9:
        return None
    for seed in seeds:
        q = clamp_config(arm, np.array(seed, dtype=float))
        for _ in range(iters):
            err = pose_error(target, fk(arm, q))
            if np.linalg.norm(err[:2]) <= tol and abs(err[2]) <= tol:
                return q
            q = clamp_config(arm, q + dls_step(arm, q, err, damping))
        err = pose_error(target, fk(arm, q))
        if np.linalg.norm(err[:2]) <= tol and abs(err[2]) <= tol:
            return q
    return None
