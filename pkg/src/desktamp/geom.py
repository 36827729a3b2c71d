"""SE(2) poses and convex polygon geometry.

Pose2 composition follows the usual convention: `a.compose(b)` places frame
b inside frame a, so world_pose = parent.compose(relative). Angles are kept
wrapped to (-pi, pi]. Polygons are convex, counterclockwise vertex arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.atan2(math.sin(a), math.cos(a))
    # atan2 maps pi to pi but -pi stays -pi; normalize the closed edge
    if w <= -math.pi:
        w = math.pi
    return w


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def compose(self, other: "Pose2") -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            wrap_angle(self.theta + other.theta),
        )

    def invert(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            wrap_angle(-self.theta),
        )

    def relative_to(self, frame: "Pose2") -> "Pose2":
        """This pose expressed in `frame`: frame^-1 o self."""
        return frame.invert().compose(self)

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def transform_point(self, p) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]])

    def almost_equal(self, other: "Pose2", tol_p: float, tol_th: float) -> bool:
        dp = math.hypot(self.x - other.x, self.y - other.y)
        dth = abs(wrap_angle(self.theta - other.theta))
        return dp <= tol_p and dth <= tol_th

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.theta]

    @staticmethod
    def from_list(v) -> "Pose2":
        return Pose2(float(v[0]), float(v[1]), wrap_angle(float(v[2])))


IDENTITY = Pose2(0.0, 0.0, 0.0)


def box(w: float, h: float) -> np.ndarray:
    """Axis-aligned box vertices centered on the origin, CCW."""
    hw, hh = w / 2.0, h / 2.0
    return np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])


def transform_polygon(verts: np.ndarray, pose: Pose2) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    rot = np.array([[c, -s], [s, c]])
    return verts @ rot.T + np.array([pose.x, pose.y])


def _axes(verts: np.ndarray) -> np.ndarray:
    edges = np.roll(verts, -1, axis=0) - verts
    axes = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    norms = np.linalg.norm(axes, axis=1)
    return axes[norms > 1e-12] / norms[norms > 1e-12, None]


def polygons_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Strict interpenetration test via separating axes; touching is not overlap."""
    for axes in (_axes(a), _axes(b)):
        for ax in axes:
            pa = a @ ax
            pb = b @ ax
            if pa.max() <= pb.min() + 1e-12 or pb.max() <= pa.min() + 1e-12:
                return False
    return True


def _seg_seg_distance(p1, p2, p3, p4) -> float:
    d1 = p2 - p1
    d2 = p4 - p3
    r = p1 - p3
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    if a <= 1e-15 and e <= 1e-15:
        return float(np.linalg.norm(r))
    if a <= 1e-15:
        t = np.clip(f / e, 0.0, 1.0)
        return float(np.linalg.norm(p1 - (p3 + t * d2)))
    c = d1 @ r
    if e <= 1e-15:
        s = np.clip(-c / a, 0.0, 1.0)
        return float(np.linalg.norm(p1 + s * d1 - p3))
    b = d1 @ d2
    denom = a * e - b * b
    s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-15 else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = np.clip(-c / a, 0.0, 1.0)
    elif t > 1.0:
        t = 1.0
        s = np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(p1 + s * d1 - (p3 + t * d2)))


def polygon_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum distance between convex polygon boundaries; 0 if overlapping."""
    if polygons_overlap(a, b):
        return 0.0
    best = math.inf
    na, nb = len(a), len(b)
    for i in range(na):
        p1, p2 = a[i], a[(i + 1) % na]
        for j in range(nb):
            d = _seg_seg_distance(p1, p2, b[j], b[(j + 1) % nb])
            if d < best:
                best = d
    return best


def min_segseg_distance(a1, a2, b1, b2) -> float:
    """Minimum distance over all pairs of segments (a1[i],a2[i]) x (b1[j],b2[j]).

    Vectorized form of _seg_seg_distance; assumes no degenerate segments.
    """
    a1 = np.asarray(a1, dtype=float)[:, None, :]
    a2 = np.asarray(a2, dtype=float)[:, None, :]
    b1 = np.asarray(b1, dtype=float)[None, :, :]
    b2 = np.asarray(b2, dtype=float)[None, :, :]
    d1 = a2 - a1
    d2 = b2 - b1
    r = a1 - b1
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    denom = a * e - b * b
    s = np.where(denom > 1e-15, np.clip((b * f - c * e) / np.where(denom > 1e-15, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / e
    s = np.where(t < 0.0, np.clip(-c / a, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    pa = a1 + s[..., None] * d1
    pb = b1 + t[..., None] * d2
    return float(np.sqrt(np.min(np.sum((pa - pb) ** 2, axis=-1))))


def segment_polygon_distance(p1, p2, verts: np.ndarray) -> float:
    """Distance from segment to polygon boundary; 0 if crossing or inside."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if point_in_polygon(p1, verts) or point_in_polygon(p2, verts):
        return 0.0
    best = math.inf
    n = len(verts)
    for j in range(n):
        d = _seg_seg_distance(p1, p2, verts[j], verts[(j + 1) % n])
        if d < best:
            best = d
    return best


def point_in_polygon(p, verts: np.ndarray) -> bool:
    """Strict interior test for a convex CCW polygon."""
    edges = np.roll(verts, -1, axis=0) - verts
    rel = np.asarray(p) - verts
    cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
    return bool(np.all(cross > 1e-12))
