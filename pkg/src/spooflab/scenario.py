"""Scenario files: the human-editable experiment configuration surface.

Keys carry their units in the name (window_deg, d_max_m, speed_mps) because
unit mistakes are the usual way geometry configs go wrong. Parsing is strict:
unknown keys are errors, reported with their full path.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .defense import DetectorConfig
from .odometry import IcpConfig
from .spoofer import AttackConfig, ScheduleFinding, validate_schedule
from .worldsim import LidarSpec

WORLD_KINDS = ("feature_rich", "sparse")
PLACEMENT_MODES = ("roadside", "fixed")


@dataclass(frozen=True)
class PlacementRule:
    """How each trial positions the spoofing device relative to the course."""

    mode: str = "roadside"
    along_track_frac: tuple[float, float] = (0.35, 0.65)
    lateral_offset_m: tuple[float, float] = (-1.0, 1.0)
    height_m: float = 1.5
    position_m: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.mode not in PLACEMENT_MODES:
            raise ValueError(f"placement mode must be one of {PLACEMENT_MODES}")
        if self.along_track_frac[0] > self.along_track_frac[1]:
            raise ValueError("along_track_frac bounds out of order")
        if not 0.0 <= self.along_track_frac[0] and self.along_track_frac[1] <= 1.0:
            raise ValueError("along_track_frac must lie in [0, 1]")
        if self.lateral_offset_m[0] > self.lateral_offset_m[1]:
            raise ValueError("lateral_offset_m bounds out of order")


@dataclass(frozen=True)
class DeadReckoningNoise:
    translation_sigma_m: float = 0.004
    yaw_sigma_rad: float = 0.0004

    def __post_init__(self):
        if self.translation_sigma_m < 0 or self.yaw_sigma_rad < 0:
            raise ValueError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class Scenario:
    name: str
    world_kind: str
    world_params: dict
    waypoints_m: tuple[tuple[float, float, float], ...]
    speed_mps: float
    lidar: LidarSpec
    odometry: IcpConfig
    attack: AttackConfig | None
    placement: PlacementRule | None
    defense: DetectorConfig | None
    dr_noise: DeadReckoningNoise
    trials: int
    base_seed: int
    tau_m: float = 3.0
    out_dir: str | None = None

    def __post_init__(self):
        if self.world_kind not in WORLD_KINDS:
            raise ValueError(f"world kind must be one of {WORLD_KINDS}")
        if len(self.waypoints_m) < 2:
            raise ValueError("trajectory needs at least two waypoints")
        if self.speed_mps <= 0:
            raise ValueError("speed_mps must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.tau_m <= 0:
            raise ValueError("tau_m must be positive")
        if (self.attack is None) != (self.placement is None):
            raise ValueError("attack and placement sections must appear together")


class ScenarioError(ValueError):
    """Parse or validation failure, with the offending key path when known."""


_MISSING = object()


def _take(d: dict, path: str, key: str, default=_MISSING):
    if key in d:
        return d.pop(key)
    if default is _MISSING:
        raise ScenarioError(f"missing required key: {path}.{key}" if path else f"missing required key: {key}")
    return default


def _no_leftovers(d: dict, path: str) -> None:
    if d:
        where = path or "top level"
        raise ScenarioError(f"unknown keys at {where}: {sorted(d)}")


def _parse_lidar(d: dict) -> LidarSpec:
    channels = int(_take(d, "lidar", "channels", 16))
    lo = float(_take(d, "lidar", "elevation_min_deg", -15.0))
    hi = float(_take(d, "lidar", "elevation_max_deg", 15.0))
    step = float(_take(d, "lidar", "azimuth_step_deg", 0.2))
    max_range = float(_take(d, "lidar", "max_range_m", 100.0))
    dt = float(_take(d, "lidar", "frame_interval_s", 0.1))
    _no_leftovers(d, "lidar")
    return LidarSpec(
        channels=channels,
        elevation_angles=np.deg2rad(np.linspace(lo, hi, channels)),
        azimuth_step=math.radians(step),
        max_range=max_range,
        frame_interval=dt,
    )


def _parse_odometry(d: dict) -> IcpConfig:
    cfg = IcpConfig(
        max_correspondence_distance=float(_take(d, "odometry", "max_correspondence_distance_m", 1.0)),
        max_iterations=int(_take(d, "odometry", "max_iterations", 30)),
        convergence_translation=float(_take(d, "odometry", "convergence_translation_m", 1e-4)),
        convergence_rotation=float(_take(d, "odometry", "convergence_rotation_rad", 1e-4)),
        downsample_voxel=float(_take(d, "odometry", "downsample_voxel_m", 0.75)),
        map_voxel=float(_take(d, "odometry", "map_voxel_m", 0.75)),
        map_max_points_per_voxel=int(_take(d, "odometry", "map_max_points_per_voxel", 1)),
    )
    _no_leftovers(d, "odometry")
    return cfg


def _parse_attack(d: dict) -> tuple[AttackConfig, PlacementRule]:
    shape = str(_take(d, "attack", "shape", "corner"))
    motion = str(_take(d, "attack", "motion", "oscillating"))
    window_deg = float(_take(d, "attack", "window_deg", 80.0))
    d_min = float(_take(d, "attack", "d_min_m", 1.0))
    d_max = float(_take(d, "attack", "d_max_m", 50.0))
    cycle = _take(d, "attack", "cycle_s", None)
    active_from = float(_take(d, "attack", "active_from_s", 0.0))
    active_until = _take(d, "attack", "active_until_s", None)
    placement_raw = _take(d, "attack", "placement", {})
    _no_leftovers(d, "attack")

    mode = str(_take(placement_raw, "attack.placement", "mode", "roadside"))
    frac = tuple(_take(placement_raw, "attack.placement", "along_track_frac", (0.35, 0.65)))
    lateral = tuple(_take(placement_raw, "attack.placement", "lateral_offset_m", (-1.0, 1.0)))
    height = float(_take(placement_raw, "attack.placement", "height_m", 1.5))
    position = tuple(_take(placement_raw, "attack.placement", "position_m", (0.0, 0.0, 0.0)))
    _no_leftovers(placement_raw, "attack.placement")
    placement = PlacementRule(
        mode=mode,
        along_track_frac=(float(frac[0]), float(frac[1])),
        lateral_offset_m=(float(lateral[0]), float(lateral[1])),
        height_m=height,
        position_m=(float(position[0]), float(position[1]), float(position[2])),
    )

    cfg = AttackConfig(
        spoofer_position=np.asarray(placement.position_m, dtype=float),
        window_width=math.radians(window_deg),
        shape=shape,
        motion=motion,
        d_min=d_min,
        d_max=d_max,
        cycle_s=None if cycle is None else float(cycle),
        active_interval=(active_from, math.inf if active_until is None else float(active_until)),
    )
    return cfg, placement


def _parse_defense(d: dict) -> DetectorConfig:
    cfg = DetectorConfig(
        w_ori=float(_take(d, "defense", "w_ori", 0.5)),
        w_speed=float(_take(d, "defense", "w_speed", 0.5)),
        threshold=float(_take(d, "defense", "threshold", 0.5)),
        k_on=int(_take(d, "defense", "k_on", 3)),
        k_off=int(_take(d, "defense", "k_off", 10)),
        velocity_window_s=float(_take(d, "defense", "velocity_window_s", 1.0)),
        stationary_floor=float(_take(d, "defense", "stationary_floor_mps", 0.05)),
        restart_uses_dead_reckoning=bool(
            _take(d, "defense", "restart_uses_dead_reckoning", False)
        ),
    )
    _no_leftovers(d, "defense")
    return cfg


def _section(name: str, fn, *args):
    # config dataclasses raise plain ValueError; callers only see ScenarioError
    try:
        return fn(*args)
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError(f"{name}: {e}") from e


def parse_scenario(raw: dict, name_fallback: str = "scenario") -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario root must be a mapping")
    d = dict(raw)
    name = str(_take(d, "", "name", name_fallback))

    world_raw = dict(_take(d, "", "world", {"kind": "feature_rich"}))
    kind = str(_take(world_raw, "world", "kind"))
    world_params = dict(world_raw)  # remaining keys are builder parameters

    traj_raw = dict(_take(d, "", "trajectory"))
    waypoints = tuple(
        tuple(float(c) for c in wp) for wp in _take(traj_raw, "trajectory", "waypoints_m")
    )
    speed = float(_take(traj_raw, "trajectory", "speed_mps"))
    _no_leftovers(traj_raw, "trajectory")

    lidar = _section("lidar", _parse_lidar, dict(_take(d, "", "lidar", {})))
    odometry = _section("odometry", _parse_odometry, dict(_take(d, "", "odometry", {})))

    attack_raw = _take(d, "", "attack", None)
    attack, placement = (
        (None, None) if attack_raw is None else _section("attack", _parse_attack, dict(attack_raw))
    )

    defense_raw = _take(d, "", "defense", None)
    defense = (
        None if defense_raw is None else _section("defense", _parse_defense, dict(defense_raw))
    )

    dr_raw = dict(_take(d, "", "dead_reckoning", {}))
    dr_noise = _section(
        "dead_reckoning",
        DeadReckoningNoise,
        float(_take(dr_raw, "dead_reckoning", "translation_sigma_m", 0.004)),
        float(_take(dr_raw, "dead_reckoning", "yaw_sigma_rad", 0.0004)),
    )
    _no_leftovers(dr_raw, "dead_reckoning")

    trials = int(_take(d, "", "trials", 10))
    base_seed = int(_take(d, "", "base_seed", 0))
    tau = float(_take(d, "", "tau_m", 3.0))
    out_dir = _take(d, "", "out_dir", None)
    _no_leftovers(d, "")

    try:
        return Scenario(
            name=name,
            world_kind=kind,
            world_params=world_params,
            waypoints_m=waypoints,
            speed_mps=speed,
            lidar=lidar,
            odometry=odometry,
            attack=attack,
            placement=placement,
            defense=defense,
            dr_noise=dr_noise,
            trials=trials,
            base_seed=base_seed,
            tau_m=tau,
            out_dir=None if out_dir is None else str(out_dir),
        )
    except ValueError as e:
        raise ScenarioError(str(e)) from e


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"cannot parse {path}: {e}") from e
    return parse_scenario(raw, name_fallback=Path(path).stem)


def scenario_to_dict(sc: Scenario) -> dict:
    """Canonical plain-data form, the input to hashing and the manifest."""
    d = {
        "name": sc.name,
        "world": {"kind": sc.world_kind, **sc.world_params},
        "trajectory": {"waypoints_m": [list(w) for w in sc.waypoints_m], "speed_mps": sc.speed_mps},
        "lidar": {
            "channels": sc.lidar.channels,
            "elevations_rad": [float(e) for e in sc.lidar.elevation_angles],
            "azimuth_step_rad": sc.lidar.azimuth_step,
            "max_range_m": sc.lidar.max_range,
            "frame_interval_s": sc.lidar.frame_interval,
        },
        "odometry": {
            "max_correspondence_distance_m": sc.odometry.max_correspondence_distance,
            "max_iterations": sc.odometry.max_iterations,
            "convergence_translation_m": sc.odometry.convergence_translation,
            "convergence_rotation_rad": sc.odometry.convergence_rotation,
            "downsample_voxel_m": sc.odometry.downsample_voxel,
            "map_voxel_m": sc.odometry.map_voxel,
            "map_max_points_per_voxel": sc.odometry.map_max_points_per_voxel,
        },
        "dead_reckoning": {
            "translation_sigma_m": sc.dr_noise.translation_sigma_m,
            "yaw_sigma_rad": sc.dr_noise.yaw_sigma_rad,
        },
        "trials": sc.trials,
        "base_seed": sc.base_seed,
        "tau_m": sc.tau_m,
    }
    if sc.attack is not None:
        d["attack"] = {
            "shape": sc.attack.shape,
            "motion": sc.attack.motion,
            "window_rad": sc.attack.window_width,
            "d_min_m": sc.attack.d_min,
            "d_max_m": sc.attack.d_max,
            "cycle_s": sc.attack.cycle_s,
            "active_interval_s": [
                sc.attack.active_interval[0],
                "inf" if math.isinf(sc.attack.active_interval[1]) else sc.attack.active_interval[1],
            ],
            "placement": {
                "mode": sc.placement.mode,
                "along_track_frac": list(sc.placement.along_track_frac),
                "lateral_offset_m": list(sc.placement.lateral_offset_m),
                "height_m": sc.placement.height_m,
                "position_m": list(sc.placement.position_m),
            },
        }
    if sc.defense is not None:
        d["defense"] = {
            "w_ori": sc.defense.w_ori,
            "w_speed": sc.defense.w_speed,
            "threshold": sc.defense.threshold,
            "k_on": sc.defense.k_on,
            "k_off": sc.defense.k_off,
            "velocity_window_s": sc.defense.velocity_window_s,
            "stationary_floor_mps": sc.defense.stationary_floor,
            "restart_uses_dead_reckoning": sc.defense.restart_uses_dead_reckoning,
        }
    return d


def scenario_hash(sc: Scenario) -> str:
    payload = json.dumps(scenario_to_dict(sc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def validate_scenario(sc: Scenario) -> list[ScheduleFinding]:
    """Cross-config checks; sub-configs validated themselves at construction."""
    findings: list[ScheduleFinding] = []
    if sc.attack is not None:
        findings.extend(
            validate_schedule(sc.attack, sc.lidar, sc.odometry.max_correspondence_distance)
        )
    return findings


def fixture_path(name: str) -> Path:
    """Path of a packaged scenario file; name without the .yaml suffix."""
    root = resources.files("spooflab") / "fixtures"
    p = Path(str(root / f"{name}.yaml"))
    if not p.exists():
        available = sorted(q.stem for q in Path(str(root)).glob("*.yaml"))
        raise FileNotFoundError(f"no fixture {name!r}; available: {available}")
    return p


def load_fixture(name: str) -> Scenario:
    return load_scenario(fixture_path(name))
