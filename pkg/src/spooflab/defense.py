"""Inertial-switching defense around the scan-matching victim.

A detector compares windowed velocities from the scan matcher and from dead
reckoning. While they agree the scan matcher's pose is passed through. Once
the weighted disagreement score stays over threshold for k_on frames, output
switches to dead reckoning anchored at the last trusted pose; the scan
matcher keeps running in shadow so the detector can tell when the anomaly
ends. After k_off calm frames the matcher is restarted at a pose extrapolated
across the blackout, and normal operation resumes.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .deadreckon import VelocityWindow
from .geometry import Pose

PHASE_NORMAL = "normal"
PHASE_ATTACK = "attack"

SOURCE_SLAM = "slam"
SOURCE_DEAD_RECKONING = "dead_reckoning"


@dataclass(frozen=True)
class DetectorConfig:
    w_ori: float = 0.5
    w_speed: float = 0.5
    threshold: float = 0.5
    k_on: int = 3
    k_off: int = 10
    velocity_window_s: float = 1.0
    stationary_floor: float = 0.05  # m/s; below this the direction term is meaningless
    restart_uses_dead_reckoning: bool = False

    def __post_init__(self):
        if self.w_ori < 0 or self.w_speed < 0:
            raise ValueError("weights must be non-negative")
        if abs(self.w_ori + self.w_speed - 1.0) > 1e-9:
            raise ValueError("w_ori + w_speed must equal 1")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.k_on < 1 or self.k_off < 1:
            raise ValueError("hysteresis counters must be at least 1")
        if self.velocity_window_s <= 0:
            raise ValueError("velocity_window_s must be positive")
        if self.stationary_floor < 0:
            raise ValueError("stationary_floor must be non-negative")


@dataclass(frozen=True)
class DefendedPoseRecord:
    t: float
    pose: Pose
    source: str
    e_ori: float
    e_speed: float
    D: float
    flagged: bool
    phase: str


def orientation_error(v_slam: np.ndarray, v_dr: np.ndarray, floor: float = 0.05) -> float:
    """1 - cosine similarity of the two velocities; 0 when either is near-stationary."""
    a = np.asarray(v_slam, dtype=float)
    b = np.asarray(v_dr, dtype=float)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < floor or nb < floor:
        return 0.0
    return 1.0 - float(a @ b) / (na * nb)


def speed_error(v_slam: np.ndarray, v_dr: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(v_slam, dtype=float) - np.asarray(v_dr, dtype=float)))


def detection_metric(e_ori: float, e_speed: float, cfg: DetectorConfig) -> float:
    return cfg.w_ori * e_ori + cfg.w_speed * e_speed


def predict_gap_transform(velocity_at_det: np.ndarray, yaw_rate_at_det: float, gap_s: float) -> Pose:
    """Constant-rate motion over the blackout gap as a detection-frame pose step."""
    if gap_s < 0:
        raise ValueError("gap_s must be non-negative")
    v = np.asarray(velocity_at_det, dtype=float)
    return Pose.from_yaw(yaw_rate_at_det * gap_s, v * gap_s)


def reconcile(world_T_det: Pose, det_T_restart: Pose, restart_T_current: Pose) -> Pose:
    """Chain the pre-attack anchor, the gap estimate, and post-restart motion."""
    return world_T_det @ det_T_restart @ restart_T_current


class DefenseState:
    """Mutable per-trial detector and switching state. Advance with defense_step."""

    def __init__(self, initial: Pose, shadow=None):
        self.phase = PHASE_NORMAL
        self.anchor_world_T_det: Pose | None = None
        self.velocity_at_det: np.ndarray | None = None  # detection body frame
        self.yaw_rate_at_det = 0.0
        self.t_det = math.nan
        self.consecutive_over = 0
        self.consecutive_under = 0
        self.shadow = shadow
        self.dr_pose = initial  # free-running reckoned chain, never re-anchored
        self.last_clean = initial
        self.last_clean_t = math.nan
        self.dr_since_det: Pose | None = None
        self._recent_increments: deque[Pose] | None = None
        self._slam_window: VelocityWindow | None = None
        self._dr_window: VelocityWindow | None = None
        self._last_t = -math.inf

    def _ensure_windows(self, cfg: DetectorConfig) -> None:
        if self._slam_window is None:
            self._slam_window = VelocityWindow(cfg.velocity_window_s)
            self._dr_window = VelocityWindow(cfg.velocity_window_s)
            self._recent_increments = deque(maxlen=cfg.k_on)


def defense_step(
    state: DefenseState,
    t: float,
    shadow_slam_pose: Pose,
    dr_increment: Pose,
    cfg: DetectorConfig,
) -> tuple[DefendedPoseRecord, DefenseState]:
    """One frame of the detect/switch/restart machine.

    Pass the scan matcher's pose for this frame (it keeps consuming scans in
    every phase) and the body-frame motion increment since the previous frame
    (identity on the first frame).
    """
    if t <= state._last_t:
        raise ValueError("frames must arrive in strictly increasing time order")
    state._ensure_windows(cfg)
    state._last_t = t

    state.dr_pose = state.dr_pose @ dr_increment
    state._recent_increments.append(dr_increment)
    state._slam_window.push(t, shadow_slam_pose.t, shadow_slam_pose.yaw())
    state._dr_window.push(t, state.dr_pose.t, state.dr_pose.yaw())

    v_slam = state._slam_window.velocity()
    v_dr = state._dr_window.velocity()
    if v_slam is None or v_dr is None:
        e_ori = 0.0
        e_speed = 0.0
    else:
        e_ori = orientation_error(v_slam, v_dr, cfg.stationary_floor)
        e_speed = speed_error(v_slam, v_dr)
    score = detection_metric(e_ori, e_speed, cfg)
    flagged = score >= cfg.threshold

    just_confirmed = False
    if state.phase == PHASE_NORMAL:
        if flagged:
            state.consecutive_over += 1
        else:
            state.consecutive_over = 0
        if state.consecutive_over >= cfg.k_on:
            just_confirmed = True
            # confirmed: rebase onto the last trusted pose and replay the
            # reckoned motion covering the k_on suspect frames
            state.phase = PHASE_ATTACK
            state.anchor_world_T_det = state.last_clean
            state.t_det = state.last_clean_t if math.isfinite(state.last_clean_t) else t
            chain = Pose.identity()
            for inc in state._recent_increments:
                chain = chain @ inc
            state.dr_since_det = chain
            dr_v = v_dr if v_dr is not None else np.zeros(3)
            R_det = state.anchor_world_T_det.rotation_matrix()
            state.velocity_at_det = R_det.T @ dr_v
            yr = state._dr_window.yaw_rate()
            state.yaw_rate_at_det = yr if yr is not None else 0.0
            state.consecutive_over = 0
            state.consecutive_under = 0

    if state.phase == PHASE_ATTACK:
        if not just_confirmed:
            # the confirmation frame's chain already covers this increment
            state.dr_since_det = state.dr_since_det @ dr_increment
        pose = state.anchor_world_T_det @ state.dr_since_det
        source = SOURCE_DEAD_RECKONING
        phase_at_t = PHASE_ATTACK
        if flagged:
            state.consecutive_under = 0
        else:
            state.consecutive_under += 1
        if state.consecutive_under >= cfg.k_off:
            gap = t - state.t_det
            if cfg.restart_uses_dead_reckoning:
                det_T_restart = state.dr_since_det
            else:
                det_T_restart = predict_gap_transform(
                    state.velocity_at_det, state.yaw_rate_at_det, gap
                )
            new_anchor = reconcile(state.anchor_world_T_det, det_T_restart, Pose.identity())
            if state.shadow is not None:
                state.shadow.reset(new_anchor)
            state._slam_window.reset()
            state.phase = PHASE_NORMAL
            state.anchor_world_T_det = None
            state.velocity_at_det = None
            state.dr_since_det = None
            state.consecutive_over = 0
            state.consecutive_under = 0
            state.last_clean = pose
            state.last_clean_t = t
    else:
        pose = shadow_slam_pose
        source = SOURCE_SLAM
        phase_at_t = PHASE_NORMAL
        if not flagged:
            state.last_clean = pose
            state.last_clean_t = t

    record = DefendedPoseRecord(t, pose, source, e_ori, e_speed, score, flagged, phase_at_t)
    return record, state


@dataclass(frozen=True)
class TrainingRun:
    """Per-frame detector inputs with ground-truth labels, margin frames removed."""

    e_ori: np.ndarray
    e_speed: np.ndarray
    attacked: np.ndarray  # boolean


def tune_weights(training_runs, trials: int, seed: int) -> DetectorConfig:
    """Seeded random search over (w_ori, threshold) maximizing frame-level F1.

    w_speed is pinned to 1 - w_ori; thresholds are drawn log-uniformly. Ties
    keep the earliest candidate so the result is deterministic per seed.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    runs = list(training_runs)
    if not runs:
        raise ValueError("at least one training run required")
    e_ori = np.concatenate([np.asarray(r.e_ori, dtype=float) for r in runs])
    e_speed = np.concatenate([np.asarray(r.e_speed, dtype=float) for r in runs])
    labels = np.concatenate([np.asarray(r.attacked, dtype=bool) for r in runs])
    if labels.all() or not labels.any():
        raise ValueError("training data must contain both attacked and clean frames")

    rng = np.random.default_rng(seed)
    w_candidates = rng.uniform(0.0, 1.0, size=trials)
    log_lo, log_hi = math.log(1e-3), math.log(1e2)
    thr_candidates = np.exp(rng.uniform(log_lo, log_hi, size=trials))

    best = None
    best_f1 = -1.0
    positives = int(labels.sum())
    for w, thr in zip(w_candidates, thr_candidates):
        scores = w * e_ori + (1.0 - w) * e_speed
        flagged = scores >= thr
        tp = int(np.count_nonzero(flagged & labels))
        fp = int(np.count_nonzero(flagged & ~labels))
        fn = positives - tp
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom > 0 else 0.0
        if f1 > best_f1:
            best_f1 = f1
            best = (float(w), float(thr))
    w_ori, threshold = best
    return DetectorConfig(w_ori=w_ori, w_speed=1.0 - w_ori, threshold=threshold)
