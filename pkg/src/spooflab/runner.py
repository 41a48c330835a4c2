"""Experiment orchestration: seeded trials, file emission, sweeps, tuning data.

Each trial is fully determined by scenario content plus base_seed + trial
index, so results are byte-identical no matter how trials are scheduled.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .deadreckon import integrate
from .defense import DefenseState, TrainingRun, defense_step, orientation_error, speed_error
from .evaluation import TrialResult, ape, boundary_keep_mask, summarize_trials
from .geometry import Pose
from .odometry import ScanMatchOdometry, run_odometry
from .scenario import PlacementRule, Scenario, scenario_hash, scenario_to_dict
from .spoofer import tamper_scan, with_position
from .worldsim import (
    GroundTruth,
    World,
    builtin_world,
    raycast_scan,
    sample_trajectory,
    synth_dead_reckoning,
)


@dataclass(frozen=True)
class SharedInputs:
    """Per-scenario immutable inputs reused across every trial."""

    world: World
    gt: GroundTruth
    clean_scans: tuple


def build_shared(sc: Scenario) -> SharedInputs:
    world = builtin_world(sc.world_kind, **sc.world_params)
    gt = sample_trajectory(sc.waypoints_m, sc.speed_mps, sc.lidar.frame_interval)
    scans = tuple(
        raycast_scan(world, pose, sc.lidar, t)
        for pose, t in zip(gt.poses, gt.timestamps)
    )
    return SharedInputs(world, gt, scans)


def _polyline_arclength(waypoints: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def draw_spoofer_position(rule: PlacementRule, waypoints_m, rng: np.random.Generator) -> np.ndarray:
    """Sample a device location relative to the course per the placement rule."""
    if rule.mode == "fixed":
        return np.asarray(rule.position_m, dtype=float)
    wps = np.asarray(waypoints_m, dtype=float)
    cum = _polyline_arclength(wps)
    frac = rng.uniform(*rule.along_track_frac)
    lateral = rng.uniform(*rule.lateral_offset_m)
    s = frac * cum[-1]
    i = int(np.searchsorted(cum[1:], s, side="right"))
    i = min(i, len(wps) - 2)
    seg = wps[i + 1] - wps[i]
    seg_len = np.linalg.norm(seg)
    along = wps[i] + seg * ((s - cum[i]) / seg_len)
    d = seg / seg_len
    left = np.array([-d[1], d[0], 0.0])
    n = np.linalg.norm(left)
    if n > 1e-12:
        left /= n
    pos = along + lateral * left
    pos[2] = rule.height_m
    return pos


def detector_features(
    timestamps: np.ndarray,
    slam_positions: np.ndarray,
    dr_positions: np.ndarray,
    window_s: float,
    floor: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame error terms computed offline from two position series.

    Matches the streaming detector on a uniform time grid: velocity at frame
    k is the displacement over the trailing window; zero until it fills.
    """
    ts = np.asarray(timestamps, dtype=float)
    ps = np.asarray(slam_positions, dtype=float)
    pd = np.asarray(dr_positions, dtype=float)
    n = len(ts)
    e_ori = np.zeros(n)
    e_speed = np.zeros(n)
    if n < 2:
        return e_ori, e_speed
    dt = ts[1] - ts[0]
    w = int(round(window_s / dt))
    if w < 1 or w >= n:
        return e_ori, e_speed
    span = ts[w:] - ts[:-w]
    v_s = (ps[w:] - ps[:-w]) / span[:, None]
    v_d = (pd[w:] - pd[:-w]) / span[:, None]
    for k in range(w, n):
        e_ori[k] = orientation_error(v_s[k - w], v_d[k - w], floor)
        e_speed[k] = speed_error(v_s[k - w], v_d[k - w])
    return e_ori, e_speed


@dataclass
class TrialArtifacts:
    trial_index: int
    seed: int
    result: TrialResult
    trajectory: np.ndarray  # columns t,x,y,z,qx,qy,qz,qw
    diagnostics: np.ndarray | None  # columns t,inliers,residual,iterations,diverged
    detector_rows: list | None  # tuples (t,e_ori,e_speed,D,flagged,phase)
    features: TrainingRun | None = None


def run_trial(
    sc: Scenario,
    trial_index: int,
    attack_on: bool,
    defense_on: bool,
    shared: SharedInputs | None = None,
    collect_features: bool = False,
    margin_s: float = 0.5,
) -> TrialArtifacts:
    if shared is None:
        shared = build_shared(sc)
    gt = shared.gt
    seed = sc.base_seed + trial_index
    rng = np.random.default_rng(seed)

    attack_cfg = None
    if sc.attack is not None:
        # draw placement even when the attack is switched off so the clean
        # pairing of the same seed sees identical dead-reckoning noise
        position = draw_spoofer_position(sc.placement, sc.waypoints_m, rng)
        attack_cfg = with_position(sc.attack, position)
    dr_stream = synth_dead_reckoning(
        gt, sc.dr_noise.translation_sigma_m, sc.dr_noise.yaw_sigma_rad, seed=rng
    )

    ts = gt.timestamps
    gate = sc.odometry.max_correspondence_distance
    if attack_on and attack_cfg is not None:
        scans = [
            tamper_scan(scan, gt.poses[k], attack_cfg, gate)
            for k, scan in enumerate(shared.clean_scans)
        ]
        attacked = np.array([attack_cfg.active_at(t) for t in ts], dtype=bool)
    else:
        scans = list(shared.clean_scans)
        attacked = np.zeros(len(ts), dtype=bool)

    initial = gt.poses[0]
    increments = [Pose.identity()] + list(dr_stream.increments)

    detector_rows = None
    scores = np.empty(0)
    flagged = np.empty(0, dtype=bool)
    if defense_on:
        if sc.defense is None:
            raise ValueError("scenario has no defense section")
        shadow = ScanMatchOdometry(sc.odometry, initial)
        state = DefenseState(initial, shadow)
        records = []
        diag_rows = []
        for k, scan in enumerate(scans):
            pose_shadow, diag = shadow.step(scan)
            rec, state = defense_step(state, ts[k], pose_shadow, increments[k], sc.defense)
            records.append(rec)
            diag_rows.append((ts[k], diag.inliers, diag.mean_residual, diag.iterations, diag.diverged))
        est_poses = [r.pose for r in records]
        scores = np.array([r.D for r in records])
        flagged = np.array([r.flagged for r in records], dtype=bool)
        detector_rows = [
            (r.t, r.e_ori, r.e_speed, r.D, int(r.flagged), r.phase) for r in records
        ]
        diagnostics = np.array(diag_rows, dtype=float)
        diverged_frames = int(sum(1 for row in diag_rows if row[4]))
    else:
        est_poses, diags = run_odometry(scans, sc.odometry, initial)
        diagnostics = np.array(
            [
                (ts[k], d.inliers, d.mean_residual, d.iterations, d.diverged)
                for k, d in enumerate(diags)
            ],
            dtype=float,
        )
        diverged_frames = int(sum(1 for d in diags if d.diverged))

    est_positions = np.array([p.t for p in est_poses])
    summary = ape(est_positions, ts, gt)

    features = None
    if collect_features and not defense_on:
        window_s = sc.defense.velocity_window_s if sc.defense is not None else 1.0
        floor = sc.defense.stationary_floor if sc.defense is not None else 0.05
        dr_chain = integrate(initial, dr_stream.increments)
        dr_positions = np.array([p.t for p in dr_chain])
        e_ori, e_speed = detector_features(ts, est_positions, dr_positions, window_s, floor)
        keep = boundary_keep_mask(ts, attacked, margin_s)
        features = TrainingRun(e_ori[keep], e_speed[keep], attacked[keep])

    result = TrialResult(
        seed=seed,
        timestamps=ts,
        ape_series=summary.series,
        ape_max=summary.ape_max,
        ape_rmse=summary.ape_rmse,
        scores=scores,
        flagged=flagged,
        attacked=attacked,
        diverged_frames=diverged_frames,
    )

    quats = np.array([[p.q[1], p.q[2], p.q[3], p.q[0]] for p in est_poses])
    trajectory = np.column_stack([ts, est_positions, quats])
    return TrialArtifacts(
        trial_index=trial_index,
        seed=seed,
        result=result,
        trajectory=trajectory,
        diagnostics=diagnostics,
        detector_rows=detector_rows,
        features=features,
    )


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_trajectory_csv(path: Path, rows: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("t,x,y,z,qx,qy,qz,qw\n")
        for r in rows:
            f.write(",".join(_fmt(v) for v in r) + "\n")


def write_diagnostics_csv(path: Path, rows: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("t,inliers,residual,iterations,diverged\n")
        for r in rows:
            f.write(
                f"{_fmt(r[0])},{int(r[1])},{_fmt(r[2])},{int(r[3])},{int(r[4])}\n"
            )


def write_detector_csv(path: Path, rows) -> None:
    with open(path, "w") as f:
        f.write("t,e_ori,e_speed,D,flagged,phase\n")
        for t, eo, es, d, fl, ph in rows:
            f.write(f"{_fmt(t)},{_fmt(eo)},{_fmt(es)},{_fmt(d)},{fl},{ph}\n")


_WORKER_STATE: dict = {}


def _worker_init(sc: Scenario) -> None:
    _WORKER_STATE["scenario"] = sc
    _WORKER_STATE["shared"] = build_shared(sc)


def _worker_trial(args):
    trial_index, attack_on, defense_on, collect = args
    try:
        art = run_trial(
            _WORKER_STATE["scenario"],
            trial_index,
            attack_on,
            defense_on,
            shared=_WORKER_STATE["shared"],
            collect_features=collect,
        )
        return ("ok", art)
    except Exception as e:
        return ("error", {"trial": trial_index, "error": str(e)})


def run_experiment(
    sc: Scenario,
    attack_on: bool | None = None,
    defense_on: bool | None = None,
    out_dir=None,
    jobs: int = 1,
    collect_features: bool = False,
    shared: SharedInputs | None = None,
) -> dict:
    """All trials of one scenario under one condition; writes artifact files.

    attack_on / defense_on default to "section present in the scenario".
    Returns the summary dict (what summary.json holds, when out_dir is set)
    plus in-memory extras under "_results" and "_features" for callers that
    aggregate further; those keys never reach the JSON.
    """
    if attack_on is None:
        attack_on = sc.attack is not None
    if defense_on is None:
        defense_on = sc.defense is not None
    if attack_on and sc.attack is None:
        raise ValueError("attack requested but scenario has no attack section")
    if defense_on and sc.defense is None:
        raise ValueError("defense requested but scenario has no defense section")

    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

    artifacts: list[TrialArtifacts] = []
    errors: list[dict] = []
    task_args = [(i, attack_on, defense_on, collect_features) for i in range(sc.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init, initargs=(sc,)) as ex:
            for status, payload in ex.map(_worker_trial, task_args):
                if status == "ok":
                    artifacts.append(payload)
                else:
                    errors.append(payload)
    else:
        if shared is None:
            shared = build_shared(sc)
        for args in task_args:
            try:
                artifacts.append(run_trial(sc, args[0], attack_on, defense_on, shared, args[3]))
            except Exception as e:  # record and continue; other trials are independent
                errors.append({"trial": args[0], "error": str(e)})

    results = [a.result for a in artifacts]
    summary = summarize_trials(results, sc.tau_m) if results else {"trials": 0}
    sc_hash = scenario_hash(sc)
    summary.update(
        {
            "scenario": sc.name,
            "scenario_hash": sc_hash,
            "attack": attack_on,
            "defense": defense_on,
        }
    )

    if out is not None:
        files = {}
        gt = shared.gt if shared is not None else sample_trajectory(
            sc.waypoints_m, sc.speed_mps, sc.lidar.frame_interval
        )
        for a in artifacts:
            tdir = out / f"trial_{a.trial_index:03d}"
            tdir.mkdir(exist_ok=True)
            write_trajectory_csv(tdir / "trajectory.csv", a.trajectory)
            write_diagnostics_csv(tdir / "diagnostics.csv", a.diagnostics)
            files[str(a.trial_index)] = str(tdir)
            if a.detector_rows is not None:
                write_detector_csv(tdir / "detector.csv", a.detector_rows)
        manifest = {
            "scenario": scenario_to_dict(sc),
            "scenario_hash": sc_hash,
            "condition": {"attack": attack_on, "defense": defense_on},
            "seeds": [sc.base_seed + i for i in range(sc.trials)],
            "version": __version__,
            "files": files,
            "errors": errors,
        }
        with open(out / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        with open(out / "summary.json", "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
        if gt is not None:
            rows = np.column_stack(
                [
                    gt.timestamps,
                    gt.positions,
                    np.array([[p.q[1], p.q[2], p.q[3], p.q[0]] for p in gt.poses]),
                ]
            )
            write_trajectory_csv(out / "ground_truth.csv", rows)

    summary["_results"] = results
    summary["_features"] = [a.features for a in artifacts if a.features is not None]
    return summary


SWEEPABLE = ("window_deg", "radial_speed_mps", "shape", "max_correspondence_distance_m")


def apply_sweep_value(sc: Scenario, parameter: str, value) -> Scenario:
    if parameter not in SWEEPABLE:
        raise ValueError(f"unknown sweep parameter {parameter!r}; choose from {SWEEPABLE}")
    if parameter == "max_correspondence_distance_m":
        odo = replace(sc.odometry, max_correspondence_distance=float(value))
        return replace(sc, odometry=odo)
    if sc.attack is None:
        raise ValueError("sweep parameter needs an attack section")
    if parameter == "window_deg":
        atk = replace(sc.attack, window_width=float(np.deg2rad(float(value))))
    elif parameter == "shape":
        atk = replace(sc.attack, shape=str(value))
    else:  # radial_speed_mps: reach the same excursion faster or slower
        speed = float(value)
        if speed <= 0:
            raise ValueError("radial speed must be positive")
        atk = replace(sc.attack, cycle_s=(sc.attack.d_max - sc.attack.d_min) / speed)
    return replace(sc, attack=atk)


def run_sweep(
    sc: Scenario,
    parameter: str,
    values,
    tau: float,
    out_dir=None,
    jobs: int = 1,
) -> list[dict]:
    """cmd_run per value; returns per-value summaries in input order."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for v in values:
        sub = apply_sweep_value(sc, parameter, v)
        sub_out = None if out_dir is None else Path(out_dir) / f"{parameter}_{v}"
        summary = run_experiment(sub, attack_on=True, defense_on=False, out_dir=sub_out, jobs=jobs)
        results = summary.pop("_results")
        summary.pop("_features", None)
        maxima = np.array([r.ape_max for r in results])
        rows.append(
            {
                "value": v,
                "trials": len(results),
                "asr": 100.0 * float(np.mean(maxima >= tau)),
                "ape_max_mean": float(maxima.mean()),
                "ape_max_sd": float(maxima.std(ddof=1)) if len(results) > 1 else 0.0,
            }
        )
    return rows
