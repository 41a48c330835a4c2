"""Trajectory-error and detection metrics.

APE here is deliberately alignment-free: estimate and ground truth share the
same anchored initial pose, and fitting one onto the other would hide exactly
the drift under study.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .worldsim import GroundTruth


@dataclass(frozen=True)
class ApeSummary:
    series: np.ndarray  # per-frame translational error, metres
    ape_max: float
    ape_rmse: float


@dataclass
class TrialResult:
    seed: int
    timestamps: np.ndarray
    ape_series: np.ndarray
    ape_max: float
    ape_rmse: float
    # per-frame detector log; empty arrays when no detector ran
    scores: np.ndarray = field(default_factory=lambda: np.empty(0))
    flagged: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    attacked: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    diverged_frames: int = 0

    def success_at(self, tau: float) -> bool:
        return self.ape_max >= tau


def ape(est_positions: np.ndarray, est_timestamps: np.ndarray, gt: GroundTruth) -> ApeSummary:
    """Per-frame translational error against ground truth, plus max and RMSE."""
    pos = np.asarray(est_positions, dtype=float).reshape(-1, 3)
    ts = np.asarray(est_timestamps, dtype=float)
    if len(pos) != len(gt.poses):
        raise ValueError("trajectory length does not match ground truth")
    if not np.allclose(ts, gt.timestamps, atol=1e-9):
        raise ValueError("trajectory timestamps do not match ground truth")
    series = np.linalg.norm(pos - gt.positions, axis=1)
    return ApeSummary(series, float(series.max()), float(np.sqrt(np.mean(series**2))))


def asr(trials, tau: float) -> float:
    """Percentage of trials whose peak error reached tau."""
    results = list(trials)
    if not results:
        raise ValueError("asr needs at least one trial")
    hits = sum(1 for r in results if r.success_at(tau))
    return 100.0 * hits / len(results)


def boundary_keep_mask(timestamps: np.ndarray, attacked: np.ndarray, margin_s: float) -> np.ndarray:
    """False for frames within margin_s of an attack-interval edge.

    Frames near the on/off boundaries measure detector latency, not quality,
    so scoring excludes them.
    """
    ts = np.asarray(timestamps, dtype=float)
    lab = np.asarray(attacked, dtype=bool)
    if len(ts) != len(lab):
        raise ValueError("timestamps and labels differ in length")
    keep = np.ones(len(ts), dtype=bool)
    if margin_s <= 0:
        return keep
    edges = np.flatnonzero(lab[1:] != lab[:-1]) + 1
    for e in edges:
        keep &= np.abs(ts - ts[e]) >= margin_s - 1e-9
    return keep


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    note: str = ""


def _counts(flagged: np.ndarray, attacked: np.ndarray) -> tuple[int, int, int, int]:
    tp = int(np.count_nonzero(flagged & attacked))
    fp = int(np.count_nonzero(flagged & ~attacked))
    fn = int(np.count_nonzero(~flagged & attacked))
    tn = int(np.count_nonzero(~flagged & ~attacked))
    return tp, fp, fn, tn


def precision_recall(
    timestamps: np.ndarray,
    flagged: np.ndarray,
    attacked: np.ndarray,
    margin_s: float = 0.5,
) -> PrecisionRecall:
    """Frame-level precision and recall with boundary frames excluded."""
    keep = boundary_keep_mask(timestamps, attacked, margin_s)
    f = np.asarray(flagged, dtype=bool)[keep]
    a = np.asarray(attacked, dtype=bool)[keep]
    if a.all() or not a.any():
        raise ValueError("labels are single-class after boundary exclusion")
    tp, fp, fn, tn = _counts(f, a)
    note = ""
    if tp + fp == 0:
        precision = 0.0
        note = "no frames flagged; precision undefined, reported as 0"
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return PrecisionRecall(precision, recall, tp, fp, fn, tn, note)


def pr_curve(
    timestamps: np.ndarray,
    scores: np.ndarray,
    attacked: np.ndarray,
    margin_s: float = 0.5,
) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) swept over the sorted unique scores.

    Flagging rule is score >= threshold, so recall is non-decreasing as the
    threshold drops.
    """
    keep = boundary_keep_mask(timestamps, attacked, margin_s)
    s = np.asarray(scores, dtype=float)[keep]
    a = np.asarray(attacked, dtype=bool)[keep]
    if a.all() or not a.any():
        raise ValueError("labels are single-class after boundary exclusion")
    points = []
    for thr in np.unique(s)[::-1]:
        f = s >= thr
        tp, fp, fn, _ = _counts(f, a)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn)
        points.append((float(thr), precision, recall))
    return points


@dataclass(frozen=True)
class SweepRow:
    value: object
    trials: int
    asr: float
    ape_max_mean: float
    ape_max_sd: float


@dataclass(frozen=True)
class SweepTable:
    parameter: str
    tau: float
    rows: tuple[SweepRow, ...]

    def to_csv(self) -> str:
        lines = [f"{self.parameter},trials,asr_tau_{self.tau:g},ape_max_mean,ape_max_sd"]
        for r in self.rows:
            lines.append(
                f"{r.value},{r.trials},{r.asr:.6g},{r.ape_max_mean:.6g},{r.ape_max_sd:.6g}"
            )
        return "\n".join(lines) + "\n"


def summarize_trials(trials, tau: float) -> dict:
    """Experiment-level aggregate used for the summary JSON."""
    results = list(trials)
    maxima = np.array([r.ape_max for r in results])
    out = {
        "trials": len(results),
        "tau_m": tau,
        "asr_percent": asr(results, tau),
        "ape_max_mean_m": float(maxima.mean()),
        "ape_max_sd_m": float(maxima.std(ddof=1)) if len(results) > 1 else 0.0,
        "ape_rmse_mean_m": float(np.mean([r.ape_rmse for r in results])),
    }
    pooled_t, pooled_f, pooled_a = [], [], []
    offset = 0.0
    for r in results:
        if len(r.flagged) != len(r.timestamps) or len(r.attacked) != len(r.timestamps):
            continue
        pooled_t.append(np.asarray(r.timestamps, dtype=float) + offset)
        pooled_f.append(np.asarray(r.flagged, dtype=bool))
        pooled_a.append(np.asarray(r.attacked, dtype=bool))
        # separate trials on the pooled axis so margins never straddle them
        offset += r.timestamps[-1] + 1000.0
    if pooled_t:
        t = np.concatenate(pooled_t)
        f = np.concatenate(pooled_f)
        a = np.concatenate(pooled_a)
        if a.any() and not a.all():
            pr = precision_recall(t, f, a)
            out["precision"] = pr.precision
            out["recall"] = pr.recall
    return out
