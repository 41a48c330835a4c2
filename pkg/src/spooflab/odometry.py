"""Scan-to-map odometry: voxel-hash map plus gated point-to-point ICP.

Deliberately plain: constant-velocity initial guess, hard correspondence
distance gate, closed-form rigid solve per iteration, no robust weighting.
This is the victim under study, not a hardened pipeline.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, quat_from_matrix
from .worldsim import RangeScan


@dataclass(frozen=True)
class IcpConfig:
    max_correspondence_distance: float = 1.0
    max_iterations: int = 30
    convergence_translation: float = 1e-4  # metres
    convergence_rotation: float = 1e-4  # radians
    downsample_voxel: float = 0.75
    map_voxel: float = 0.75
    map_max_points_per_voxel: int = 1

    def __post_init__(self):
        if self.max_correspondence_distance <= 0:
            raise ValueError("max_correspondence_distance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.convergence_translation <= 0 or self.convergence_rotation <= 0:
            raise ValueError("convergence thresholds must be positive")
        if self.downsample_voxel <= 0 or self.map_voxel <= 0:
            raise ValueError("voxel sizes must be positive")
        if self.map_max_points_per_voxel < 1:
            raise ValueError("map_max_points_per_voxel must be at least 1")


@dataclass
class RegistrationDiag:
    inliers: int
    mean_residual: float
    iterations: int
    diverged: bool


_PACK = np.array([1 << 42, 1 << 21, 1], dtype=np.int64)
_OFFSET = 1 << 20


def _voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    idx = np.floor(points / voxel).astype(np.int64) + _OFFSET
    if np.any((idx < 0) | (idx >= (1 << 21))):
        raise ValueError("point coordinates exceed the voxel index range")
    return idx @ _PACK


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """One centroid per occupied voxel; output ordered by voxel key (deterministic)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    if len(pts) == 0:
        return pts.copy()
    keys = _voxel_keys(pts, voxel)
    uniq, inv = np.unique(keys, return_inverse=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inv, pts)
    counts = np.bincount(inv, minlength=len(uniq)).astype(float)
    return sums / counts[:, None]


class VoxelMap:
    """Append-only world-frame point map with a per-voxel population cap.

    Inserts keep the earliest arrivals: once a voxel holds `cap` points, later
    candidates for it are dropped. Nearest-neighbour queries run on an exact
    KD-tree over the stored points, rebuilt lazily after growth.
    """

    def __init__(self, voxel: float, cap: int):
        if voxel <= 0 or cap < 1:
            raise ValueError("voxel must be positive and cap at least 1")
        self.voxel = voxel
        self.cap = cap
        self._counts: dict[int, int] = {}
        self._store = np.empty((1024, 3))
        self._size = 0
        self._tree: cKDTree | None = None

    def __len__(self) -> int:
        return self._size

    @property
    def points(self) -> np.ndarray:
        return self._store[: self._size]

    def insert(self, points: np.ndarray) -> int:
        """Insert world-frame points subject to the cap; returns how many stuck."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            return 0
        keys = _voxel_keys(pts, self.voxel)
        order = np.argsort(keys, kind="stable")  # group, but keep arrival order in groups
        keys_s = keys[order]
        group_start = np.flatnonzero(np.r_[True, keys_s[1:] != keys_s[:-1]])
        rank = np.arange(len(keys_s)) - np.repeat(group_start, np.diff(np.r_[group_start, len(keys_s)]))
        existing = np.fromiter(
            (self._counts.get(int(k), 0) for k in keys_s[group_start]),
            dtype=np.int64,
            count=len(group_start),
        )
        room = self.cap - np.repeat(existing, np.diff(np.r_[group_start, len(keys_s)]))
        accept = rank < room
        taken = pts[order[accept]]
        n = len(taken)
        if n == 0:
            return 0
        kept_keys = keys_s[accept]
        uk, uc = np.unique(kept_keys, return_counts=True)
        for k, c in zip(uk, uc):
            self._counts[int(k)] = self._counts.get(int(k), 0) + int(c)
        while self._size + n > len(self._store):
            self._store = np.vstack([self._store, np.empty_like(self._store)])
        self._store[self._size : self._size + n] = taken
        self._size += n
        self._tree = None
        return n

    def tree(self) -> cKDTree:
        if self._size == 0:
            raise ValueError("empty map has no neighbours")
        if self._tree is None:
            self._tree = cKDTree(self._store[: self._size])
        return self._tree

    def voxel_count(self, key: int) -> int:
        return self._counts.get(key, 0)

    def prune_beyond(self, center: np.ndarray, radius: float) -> int:
        """Forget points farther than radius from center; returns dropped count.

        Keeps the map a local neighbourhood of the sensor so query structures
        stay small on long runs.
        """
        if self._size == 0:
            return 0
        pts = self._store[: self._size]
        keep = np.linalg.norm(pts - np.asarray(center, dtype=float), axis=1) <= radius
        dropped = int(np.count_nonzero(~keep))
        if dropped == 0:
            return 0
        kept = pts[keep].copy()
        self._size = len(kept)
        while len(self._store) < max(self._size, 1024):
            self._store = np.vstack([self._store, np.empty_like(self._store)])
        self._store[: self._size] = kept
        keys = _voxel_keys(kept, self.voxel)
        uk, uc = np.unique(keys, return_counts=True)
        self._counts = {int(k): int(c) for k, c in zip(uk, uc)}
        self._tree = None
        return dropped


def register_scan(
    vmap: VoxelMap, scan_points: np.ndarray, guess: Pose, cfg: IcpConfig
) -> tuple[Pose, RegistrationDiag]:
    """Gated point-to-point ICP of a sensor-frame point set against the map.

    Pairs farther than the gate are discarded each iteration. If an iteration
    is left with zero pairs the solve is abandoned and the guess is returned
    unchanged, flagged as diverged.
    """
    if len(vmap) == 0:
        raise ValueError("cannot register against an empty map")
    pts = np.asarray(scan_points, dtype=float).reshape(-1, 3)
    gate = cfg.max_correspondence_distance
    R = guess.rotation_matrix()
    t = guess.t.copy()
    if len(pts) == 0:
        return guess, RegistrationDiag(0, math.nan, 0, True)

    tree = vmap.tree()
    map_pts = vmap.points
    iterations = 0
    inliers = 0
    mean_residual = math.nan
    for iterations in range(1, cfg.max_iterations + 1):
        world = pts @ R.T + t
        dist, idx = tree.query(world)
        keep = dist <= gate
        inliers = int(np.count_nonzero(keep))
        if inliers == 0:
            return guess, RegistrationDiag(0, math.nan, iterations, True)
        src = world[keep]
        dst = map_pts[idx[keep]]
        mean_residual = float(dist[keep].mean())

        cs = src.mean(axis=0)
        cd = dst.mean(axis=0)
        H = (src - cs).T @ (dst - cd)
        U, _, Vt = np.linalg.svd(H)
        D = np.eye(3)
        D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T))
        dR = Vt.T @ D @ U.T
        dt = cd - dR @ cs

        R = dR @ R
        t = dR @ t + dt

        ang = math.acos(max(-1.0, min(1.0, (np.trace(dR) - 1.0) / 2.0)))
        if np.linalg.norm(dt) < cfg.convergence_translation and ang < cfg.convergence_rotation:
            break

    pose = Pose(quat_from_matrix(R), t)
    return pose, RegistrationDiag(inliers, mean_residual, iterations, False)


def update_map(vmap: VoxelMap, scan_points: np.ndarray, pose: Pose, cfg: IcpConfig) -> int:
    """Transform a sensor-frame point set by the pose and insert it. Returns inserted count."""
    pts = np.asarray(scan_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return 0
    return vmap.insert(pose.transform(pts))


def predict_initial_guess(history) -> Pose:
    """Constant-velocity prediction: last pose advanced by the last relative motion."""
    poses = list(history)
    if not poses:
        return Pose.identity()
    if len(poses) == 1:
        return poses[-1]
    prev, last = poses[-2], poses[-1]
    return last @ (prev.inverse() @ last)


class ScanMatchOdometry:
    """Streaming odometry: downsample, predict, register, insert, advance."""

    # local-map housekeeping: forget geometry far behind the sensor
    TRIM_EVERY_FRAMES = 50
    TRIM_RADIUS_M = 250.0

    def __init__(self, cfg: IcpConfig, initial: Pose):
        self.cfg = cfg
        self._initial = initial
        self.reset(initial)

    def reset(self, initial: Pose) -> None:
        self._initial = initial
        self.vmap = VoxelMap(self.cfg.map_voxel, self.cfg.map_max_points_per_voxel)
        self.history: deque[Pose] = deque(maxlen=2)
        self.pose = initial
        self.frame_index = 0

    def step(self, scan: RangeScan) -> tuple[Pose, RegistrationDiag]:
        pts = voxel_downsample(scan.points(), self.cfg.downsample_voxel)
        if len(self.vmap) == 0:
            # first frame with any returns seeds the map at the anchor pose
            pose = self._initial
            diag = RegistrationDiag(len(pts), 0.0, 0, False)
        else:
            guess = predict_initial_guess(self.history)
            pose, diag = register_scan(self.vmap, pts, guess, self.cfg)
        update_map(self.vmap, pts, pose, self.cfg)
        self.history.append(pose)
        self.pose = pose
        self.frame_index += 1
        if self.frame_index % self.TRIM_EVERY_FRAMES == 0:
            self.vmap.prune_beyond(pose.t, self.TRIM_RADIUS_M)
        return pose, diag


def run_odometry(
    scans, cfg: IcpConfig, initial: Pose
) -> tuple[list[Pose], list[RegistrationDiag]]:
    """Feed scans through a fresh odometry instance; one pose and diag per scan."""
    odo = ScanMatchOdometry(cfg, initial)
    poses = []
    diags = []
    for scan in scans:
        pose, diag = odo.step(scan)
        poses.append(pose)
        diags.append(diag)
    return poses, diags
