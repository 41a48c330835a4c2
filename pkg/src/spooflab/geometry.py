"""Rigid-body poses, quaternion helpers, and beam/point conversions.

Conventions used across the package:
  * right-handed frames, +x forward, +y left, +z up
  * azimuth in [-pi, pi), zero along +x, counterclockwise positive
  * elevation in [-pi/2, pi/2], positive above the horizontal plane
  * quaternions stored as (w, x, y, z), unit norm
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    return (np.asarray(angle) + math.pi) % TWO_PI - math.pi


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]))
    if n == 0.0:
        raise ValueError("zero quaternion cannot be normalized")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_yaw(yaw: float) -> np.ndarray:
    half = 0.5 * yaw
    return np.array([math.cos(half), 0.0, 0.0, math.sin(half)])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    # Shepperd's method, branch on the largest diagonal term for stability.
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def rotation_angle(q: np.ndarray) -> float:
    """Magnitude of the rotation encoded by a unit quaternion, in radians."""
    w = min(1.0, abs(float(q[0])))
    return 2.0 * math.acos(w)


class PolarBeam(NamedTuple):
    azimuth: float
    elevation: float
    range: float


@dataclass(frozen=True)
class Pose:
    """SE(3) pose: rotation as a unit quaternion (w,x,y,z) plus translation."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_yaw(yaw), np.asarray(translation, dtype=float))

    def compose(self, other: "Pose") -> "Pose":
        q = quat_normalize(quat_multiply(self.q, other.q))
        t = self.t + quat_to_matrix(self.q) @ other.t
        return Pose(q, t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.q)
        return Pose(qi, -(quat_to_matrix(qi) @ self.t))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map sensor/body-frame points (3,) or (N,3) into this pose's parent frame."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return quat_to_matrix(self.q) @ pts + self.t
        return pts @ quat_to_matrix(self.q).T + self.t

    def yaw(self) -> float:
        m = quat_to_matrix(self.q)
        return math.atan2(m[1, 0], m[0, 0])

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        dq = min(
            float(np.abs(self.q - other.q).max()),
            float(np.abs(self.q + other.q).max()),  # q and -q encode the same rotation
        )
        return dq <= tol and float(np.abs(self.t - other.t).max()) <= tol


def beam_to_point(beam: PolarBeam) -> np.ndarray:
    """Convert a polar beam return to a sensor-frame cartesian point."""
    if not math.isfinite(beam.range) or beam.range <= 0.0:
        raise ValueError(f"beam range must be finite and positive, got {beam.range}")
    if not -math.pi / 2 <= beam.elevation <= math.pi / 2:
        raise ValueError(f"elevation outside [-pi/2, pi/2]: {beam.elevation}")
    ce = math.cos(beam.elevation)
    return np.array(
        [
            beam.range * ce * math.cos(beam.azimuth),
            beam.range * ce * math.sin(beam.azimuth),
            beam.range * math.sin(beam.elevation),
        ]
    )


def point_to_beam(point: np.ndarray) -> PolarBeam:
    p = np.asarray(point, dtype=float)
    r = float(np.linalg.norm(p))
    if r <= 0.0 or not math.isfinite(r):
        raise ValueError("cannot convert a zero or non-finite point to a beam")
    return PolarBeam(
        azimuth=float(wrap_angle(math.atan2(p[1], p[0]))),
        elevation=math.asin(max(-1.0, min(1.0, p[2] / r))),
        range=r,
    )


def beams_to_points(azimuths: np.ndarray, elevations: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Vectorized beam-to-point conversion; all inputs broadcast to a common shape."""
    az, el, r = np.broadcast_arrays(azimuths, elevations, ranges)
    ce = np.cos(el)
    return np.stack([r * ce * np.cos(az), r * ce * np.sin(az), r * np.sin(el)], axis=-1)
