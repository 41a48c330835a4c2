"""LiDAR spoofing: shaped false walls injected into an azimuth window of the scan.

The injector owns an azimuth window of the victim's scan, centred on the
bearing from the sensor to the emitter, and overwrites every beam in that
window across all channels. Two knobs define the attack:

  * shape: what the false surface looks like. "cylinder" keeps a constant
    range (an arc centred on the sensor). "corner" and "plane" are cuts of an
    axis-aligned square boundary expressed in polar form,

        range(theta) = side / (|sin theta| + |cos theta|),

    which is the locus |x| + |y| = side. For "corner" the square is oriented
    so a corner apex points back at the sensor along the window centre; for
    "plane" it is rotated an eighth turn so one flat face sits square-on.
    Both present the sensor with a surface whose frame-to-frame motion is a
    rigid translation, so every false correspondence votes for the same pose
    error instead of a spread of directions.

  * motion: how the surface's anchor distance evolves. "static" holds one
    distance; "oscillating" ramps it linearly from d_min to d_max over one
    cycle and wraps (a sawtooth). Picking the cycle so the per-frame step
    equals the victim's correspondence gate keeps every false pair just
    inside the gate, the strongest displacement the matcher will accept.

The false wall spans all channels as a vertical prism: each channel's range
is the horizontal-plane range divided by cos(elevation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .geometry import Pose, wrap_angle
from .worldsim import NO_RETURN, LidarSpec, RangeScan

Shape = Literal["cylinder", "corner", "plane"]
Motion = Literal["static", "oscillating"]

_QUARTER = math.pi / 4.0


@dataclass(frozen=True)
class AttackConfig:
    spoofer_position: np.ndarray
    window_width: float
    shape: Shape = "corner"
    motion: Motion = "oscillating"
    d_min: float = 1.0
    d_max: float = 50.0
    cycle_s: float | None = None  # None: derive from the victim gate at run time
    active_interval: tuple[float, float] = (0.0, math.inf)

    def __post_init__(self):
        object.__setattr__(
            self, "spoofer_position", np.asarray(self.spoofer_position, dtype=float).reshape(3)
        )
        if self.shape not in ("cylinder", "corner", "plane"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.motion not in ("static", "oscillating"):
            raise ValueError(f"unknown motion {self.motion!r}")
        if not (0.0 <= self.window_width < 2.0 * math.pi):
            raise ValueError("window_width must lie in [0, 2*pi)")
        if self.d_min <= 0 or self.d_max <= 0:
            raise ValueError("injection distances must be positive")
        if self.motion == "oscillating" and not self.d_min < self.d_max:
            raise ValueError("oscillating motion needs d_min < d_max")
        if self.motion == "static" and self.d_min != self.d_max:
            raise ValueError("static motion uses one distance; set d_min == d_max")
        if self.cycle_s is not None and self.cycle_s <= 0:
            raise ValueError("cycle_s must be positive")
        t0, t1 = self.active_interval
        if not t0 < t1:
            raise ValueError("active_interval must have t_start < t_end")

    @staticmethod
    def static_wall(spoofer_position, window_width: float, distance: float, **kw) -> "AttackConfig":
        return AttackConfig(
            spoofer_position=spoofer_position,
            window_width=window_width,
            shape=kw.pop("shape", "cylinder"),
            motion="static",
            d_min=distance,
            d_max=distance,
            **kw,
        )

    def active_at(self, t: float) -> bool:
        return self.active_interval[0] <= t <= self.active_interval[1]

    def resolved_cycle(self, gate: float, frame_interval: float) -> float:
        if self.cycle_s is not None:
            return self.cycle_s
        return derive_cycle(self.d_min, self.d_max, gate, frame_interval)


def derive_cycle(d_min: float, d_max: float, gate: float, frame_interval: float) -> float:
    """Slowest sawtooth period whose per-frame range step still fills the gate.

    The surface advances (d_max - d_min) / cycle metres per second; holding the
    per-frame step at exactly `gate` gives cycle = (d_max - d_min) * dt / gate.
    """
    if d_min <= 0 or d_max <= d_min:
        raise ValueError("need 0 < d_min < d_max")
    if gate <= 0 or frame_interval <= 0:
        raise ValueError("gate and frame_interval must be positive")
    return (d_max - d_min) / gate * frame_interval


def injection_distance(t: float, cfg: AttackConfig, cycle_s: float | None = None) -> float | None:
    """Anchor distance of the false surface at time t, or None while inactive."""
    if not cfg.active_at(t):
        return None
    if cfg.motion == "static":
        return cfg.d_max
    if cycle_s is None:
        if cfg.cycle_s is None:
            raise ValueError("oscillating config without cycle_s; resolve it against the gate first")
        cycle_s = cfg.cycle_s
    phase = (t - cfg.active_interval[0]) % cycle_s
    return cfg.d_min + (cfg.d_max - cfg.d_min) * phase / cycle_s


def fake_range(theta_rel, shape: Shape, boresight_distance: float):
    """Horizontal-plane range of the false surface at window offset theta_rel.

    theta_rel is measured from the window centre (the spoofer bearing); the
    surface is scaled so its nearest point along the boresight sits at
    boresight_distance. Accepts scalars or arrays.
    """
    if boresight_distance <= 0:
        raise ValueError("boresight_distance must be positive")
    th = np.asarray(theta_rel, dtype=float)
    if np.any(np.abs(th) > math.pi + 1e-12):
        raise ValueError("theta_rel must lie within [-pi, pi]")
    if shape == "cylinder":
        out = np.full_like(th, boresight_distance, dtype=float)
    elif shape == "corner":
        out = boresight_distance / (np.abs(np.sin(th)) + np.abs(np.cos(th)))
    elif shape == "plane":
        rot = th + _QUARTER
        side = math.sqrt(2.0) * boresight_distance
        out = side / (np.abs(np.sin(rot)) + np.abs(np.cos(rot)))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return float(out) if np.isscalar(theta_rel) else out


def tamper_scan(
    clean: RangeScan,
    sensor_pose: Pose,
    cfg: AttackConfig,
    gate: float,
) -> RangeScan:
    """Overwrite the in-window beams of a scan with the false surface.

    The window is centred on the sensor-frame bearing to the emitter,
    recomputed from the current pose (the emitter tracks the sensor
    perfectly). Beams outside the window are untouched, bit for bit. Fake
    returns beyond the sensor's range cap are dropped to NO_RETURN: the
    injector cannot outrange the receiver.
    """
    spec = clean.spec
    if not cfg.active_at(clean.timestamp):
        return clean
    cycle = (
        cfg.resolved_cycle(gate, spec.frame_interval) if cfg.motion == "oscillating" else None
    )
    d = injection_distance(clean.timestamp, cfg, cycle_s=cycle)
    if cfg.window_width <= 0.0:
        return clean

    rel = cfg.spoofer_position - sensor_pose.t
    rel_sensor = sensor_pose.rotation_matrix().T @ rel
    bearing = math.atan2(rel_sensor[1], rel_sensor[0])

    offsets = wrap_angle(spec.azimuth_angles - bearing)
    in_window = np.abs(offsets) <= cfg.window_width / 2.0
    if not np.any(in_window):
        return RangeScan(clean.timestamp, clean.ranges.copy(), spec)

    horiz = fake_range(offsets[in_window], cfg.shape, d)
    grid = clean.ranges.copy()
    per_channel = horiz[None, :] / np.cos(spec.elevation_angles)[:, None]
    per_channel[per_channel > spec.max_range] = NO_RETURN
    grid[:, in_window] = per_channel
    return RangeScan(clean.timestamp, grid, spec)


@dataclass(frozen=True)
class ScheduleFinding:
    code: str
    message: str


RANGE_CAP = "injection_beyond_range_cap"
STEP_OVER_GATE = "step_exceeds_gate"


def validate_schedule(
    cfg: AttackConfig, spec: LidarSpec, gate: float
) -> list[ScheduleFinding]:
    """Check the two injection feasibility constraints; empty list means clean.

    Distinct findings: (a) the far anchor distance must not exceed what the
    sensor can measure; (b) the per-frame range step must not exceed the
    victim's correspondence gate, or the false pairs fall outside matching.
    """
    findings = []
    if cfg.d_max > spec.max_range:
        findings.append(
            ScheduleFinding(
                RANGE_CAP,
                f"far distance {cfg.d_max:g} m exceeds sensor range cap {spec.max_range:g} m",
            )
        )
    if cfg.motion == "oscillating":
        cycle = cfg.resolved_cycle(gate, spec.frame_interval)
        step = (cfg.d_max - cfg.d_min) / cycle * spec.frame_interval
        if step > gate + 1e-9:
            findings.append(
                ScheduleFinding(
                    STEP_OVER_GATE,
                    f"per-frame step {step:.6g} m exceeds correspondence gate {gate:g} m",
                )
            )
    return findings


def with_position(cfg: AttackConfig, position) -> AttackConfig:
    return replace(cfg, spoofer_position=np.asarray(position, dtype=float).reshape(3))
