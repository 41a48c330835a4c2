"""Inertial dead-reckoning support: increment integration and windowed rates.

The reckoned chain is a pure composition of per-frame relative transforms, so
its error grows with distance but it never reacts to scan content. That
independence is what the detector leans on.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, wrap_angle


def integrate(initial: Pose, increments) -> list[Pose]:
    """Chain relative transforms onto an anchor pose.

    increments[k] maps frame k to frame k+1 in the body frame, giving
    len(increments) + 1 absolute poses with poses[0] == initial.
    """
    poses = [initial]
    for inc in increments:
        poses.append(poses[-1] @ inc)
    return poses


def relative_motion(chain, i: int, j: int) -> Pose:
    """Body-frame transform taking the chain from index i to index j."""
    return chain[i].inverse() @ chain[j]


class VelocityWindow:
    """Finite-difference velocity and yaw rate over a trailing time window.

    Samples are (timestamp, position, yaw). Estimates use the oldest sample
    that still lies inside the window against the newest one; until the span
    reaches the window length the estimates are None.
    """

    def __init__(self, window_s: float):
        if window_s <= 0:
            raise ValueError("window_s must be positive")
        self.window_s = window_s
        self._samples: deque[tuple[float, np.ndarray, float]] = deque()
        self._unwrapped_yaw = 0.0
        self._last_raw_yaw: float | None = None

    def reset(self) -> None:
        self._samples.clear()
        self._unwrapped_yaw = 0.0
        self._last_raw_yaw = None

    def push(self, timestamp: float, position: np.ndarray, yaw: float = 0.0) -> None:
        if self._samples and timestamp <= self._samples[-1][0]:
            raise ValueError("timestamps must be strictly increasing")
        if self._last_raw_yaw is None:
            self._unwrapped_yaw = yaw
        else:
            self._unwrapped_yaw += wrap_angle(yaw - self._last_raw_yaw)
        self._last_raw_yaw = yaw
        self._samples.append((timestamp, np.asarray(position, dtype=float).copy(), self._unwrapped_yaw))
        # keep exactly one sample at or beyond the window boundary
        while len(self._samples) >= 2 and self._samples[-1][0] - self._samples[1][0] >= self.window_s:
            self._samples.popleft()

    def _endpoints(self):
        if len(self._samples) < 2:
            return None
        t0, p0, y0 = self._samples[0]
        t1, p1, y1 = self._samples[-1]
        if t1 - t0 < self.window_s - 1e-9:
            return None
        return t0, p0, y0, t1, p1, y1

    def velocity(self) -> np.ndarray | None:
        ends = self._endpoints()
        if ends is None:
            return None
        t0, p0, _, t1, p1, _ = ends
        return (p1 - p0) / (t1 - t0)

    def yaw_rate(self) -> float | None:
        ends = self._endpoints()
        if ends is None:
            return None
        t0, _, y0, t1, _, y1 = ends
        return (y1 - y0) / (t1 - t0)

    def span(self) -> float:
        if len(self._samples) < 2:
            return 0.0
        return self._samples[-1][0] - self._samples[0][0]


@dataclass(frozen=True)
class VelocityEstimate:
    linear_velocity: np.ndarray
    valid: bool


def windowed_velocity(timestamps, positions, t: float, window_s: float) -> VelocityEstimate:
    """Finite-difference velocity at time t over the trailing window.

    Invalid until a sample at or before t - window_s exists. Uses the latest
    such sample, so on a uniform grid that divides the window this is exactly
    (p(t) - p(t - window_s)) / window_s.
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    ts = np.asarray(timestamps, dtype=float)
    ps = np.asarray(positions, dtype=float).reshape(-1, 3)
    hits = np.flatnonzero(np.abs(ts - t) <= 1e-9)
    if len(hits) != 1:
        raise ValueError("t must match exactly one sample")
    i = int(hits[0])
    earlier = np.flatnonzero(ts <= t - window_s + 1e-9)
    if len(earlier) == 0:
        return VelocityEstimate(np.zeros(3), False)
    j = int(earlier[-1])
    v = (ps[i] - ps[j]) / (ts[i] - ts[j])
    return VelocityEstimate(v, True)
