"""Evaluation metrics: displacement errors, min-of-K variants, chi-square
distances over physics primitives, per-timestep errors, and score-binned
summaries."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, InputShapeError
from .oracle import Trajectory, wrap_angle


@dataclass
class HistogramSpec:
    n_bins: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2")
        if not self.lo < self.hi:
            raise ConfigError("histogram range must satisfy lo < hi")


PRIMITIVES = ("velocity", "acceleration", "angular_velocity", "angular_acceleration")
DEFAULT_N_BINS = 50
DEFAULT_RANGE_MARGIN = 0.05
STATIONARY_EPS = 1e-6


@dataclass
class MetricsReport:
    ade: float
    fde: float
    min_ade: float
    min_fde: float
    chi2: dict
    per_timestep: list[float]
    n_samples: int
    histogram_specs: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return asdict(self)


def ade(pred: Trajectory, gt: Trajectory) -> float:
    """Mean Euclidean distance over frames."""
    if len(pred) != len(gt):
        raise InputShapeError("prediction/ground-truth length mismatch")
    return float(np.mean(np.linalg.norm(pred.points - gt.points, axis=1)))


def fde(pred: Trajectory, gt: Trajectory) -> float:
    """Euclidean distance at the final frame."""
    if len(pred) != len(gt):
        raise InputShapeError("prediction/ground-truth length mismatch")
    return float(np.linalg.norm(pred.points[-1] - gt.points[-1]))


def per_timestep_errors(pred: Trajectory, gt: Trajectory) -> np.ndarray:
    if len(pred) != len(gt):
        raise InputShapeError("prediction/ground-truth length mismatch")
    return np.linalg.norm(pred.points - gt.points, axis=1)


def min_over_heads(metric, trajectories: list[Trajectory], gt: Trajectory) -> float:
    if not trajectories:
        raise InputShapeError("need at least one head")
    return min(metric(t, gt) for t in trajectories)


def physics_primitives(traj: Trajectory) -> dict:
    """Speed, tangential acceleration, angular velocity, angular acceleration
    sequences. Stationary steps carry the previous heading forward."""
    if len(traj) < 4:
        raise InputShapeError("need at least 4 points for all physics primitives")
    dt = traj.dt
    disp = traj.displacements()
    speeds = np.linalg.norm(disp, axis=1) / dt
    accel = np.diff(speeds) / dt

    headings = np.empty(len(disp))
    prev = 0.0
    for i, d in enumerate(disp):
        if np.linalg.norm(d) >= STATIONARY_EPS:
            prev = math.atan2(d[1], d[0])
        headings[i] = prev
    ang_vel = np.array(
        [wrap_angle(headings[i + 1] - headings[i]) / dt for i in range(len(headings) - 1)]
    )
    ang_acc = np.diff(ang_vel) / dt
    return {
        "velocity": speeds,
        "acceleration": accel,
        "angular_velocity": ang_vel,
        "angular_acceleration": ang_acc,
    }


def chi2_distance(pred_samples, gt_samples, spec: HistogramSpec) -> float:
    """Chi-square distance between the normalized histograms of two sample
    sets; symmetric and bounded in [0, 2]."""
    pred_samples = np.asarray(pred_samples, dtype=float)
    gt_samples = np.asarray(gt_samples, dtype=float)
    if pred_samples.size == 0 or gt_samples.size == 0:
        raise InputShapeError("chi2_distance needs non-empty sample sets")
    edges = np.linspace(spec.lo, spec.hi, spec.n_bins + 1)
    p = np.histogram(np.clip(pred_samples, spec.lo, spec.hi), bins=edges)[0].astype(float)
    q = np.histogram(np.clip(gt_samples, spec.lo, spec.hi), bins=edges)[0].astype(float)
    p /= p.sum()
    q /= q.sum()
    denom = p + q
    num = (p - q) ** 2
    mask = denom > 0
    return float(np.sum(num[mask] / denom[mask]))


def histogram_spec_from_samples(samples, n_bins: int = DEFAULT_N_BINS,
                                margin: float = DEFAULT_RANGE_MARGIN) -> HistogramSpec:
    """Uniform bins over the ground-truth sample range with a safety margin."""
    samples = np.asarray(samples, dtype=float)
    lo, hi = float(samples.min()), float(samples.max())
    span = max(hi - lo, 1e-9)
    return HistogramSpec(n_bins=n_bins, lo=lo - margin * span, hi=hi + margin * span)


def bin_by_plausibility(scores, ades, n_bins: int = 10) -> list[dict]:
    """Uniform score bins over [0, 1]; each entry carries count and mean ADE."""
    scores = np.asarray(scores, dtype=float)
    ades = np.asarray(ades, dtype=float)
    if scores.shape != ades.shape:
        raise InputShapeError("scores and ADEs must have matching lengths")
    if scores.size and (scores.min() < 0 or scores.max() > 1):
        raise InputShapeError("scores must lie in [0, 1]")
    bins = []
    for b in range(n_bins):
        lo = b / n_bins
        hi = (b + 1) / n_bins
        if b == n_bins - 1:
            mask = (scores >= lo) & (scores <= hi)
        else:
            mask = (scores >= lo) & (scores < hi)
        count = int(mask.sum())
        bins.append(
            {
                "bin": b,
                "lo": lo,
                "hi": hi,
                "count": count,
                "mean_ade": float(ades[mask].mean()) if count else 0.0,
            }
        )
    return bins


def spearman_rho(x, y) -> float:
    """Spearman rank correlation, average ranks on ties."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise InputShapeError("need at least two points for a correlation")

    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(len(v), dtype=float)
        # average tied ranks
        for val in np.unique(v):
            mask = v == val
            if mask.sum() > 1:
                r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise InputShapeError("need at least two points for a correlation")
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


# ---------------------------------------------------------------------------
# Aggregation


def evaluate_predictions(
    prediction_sets: list[list[Trajectory]],
    ground_truths: list[Trajectory],
    n_bins: int = DEFAULT_N_BINS,
) -> MetricsReport:
    """Aggregate metrics over a list of evaluation cases. ADE/FDE are averaged
    over every head of every case; minADE/minFDE take the best head per case.
    Chi-square distances compare pooled physics primitives of predictions
    against those of the ground truths."""
    if len(prediction_sets) != len(ground_truths) or not prediction_sets:
        raise InputShapeError("need matching, non-empty prediction and ground-truth lists")
    horizon = len(ground_truths[0])

    per_ts_sum = np.zeros(horizon)
    ades, fdes, min_ades, min_fdes = [], [], [], []
    pred_prims = {p: [] for p in PRIMITIVES}
    gt_prims = {p: [] for p in PRIMITIVES}

    n_traj = 0
    for heads, gt in zip(prediction_sets, ground_truths):
        case_ades = []
        case_fdes = []
        for t in heads:
            case_ades.append(ade(t, gt))
            case_fdes.append(fde(t, gt))
            per_ts_sum += per_timestep_errors(t, gt)
            n_traj += 1
            prims = physics_primitives(t)
            for p in PRIMITIVES:
                pred_prims[p].append(prims[p])
        ades.extend(case_ades)
        fdes.extend(case_fdes)
        min_ades.append(min(case_ades))
        min_fdes.append(min(case_fdes))
        gprims = physics_primitives(gt)
        for p in PRIMITIVES:
            gt_prims[p].append(gprims[p])

    chi2 = {}
    specs = {}
    for p in PRIMITIVES:
        gt_all = np.concatenate(gt_prims[p])
        pred_all = np.concatenate(pred_prims[p])
        spec = histogram_spec_from_samples(gt_all, n_bins=n_bins)
        specs[p] = asdict(spec)
        chi2[p] = chi2_distance(pred_all, gt_all, spec)

    per_timestep = (per_ts_sum / n_traj).tolist()
    return MetricsReport(
        ade=float(np.mean(ades)),
        fde=float(np.mean(fdes)),
        min_ade=float(np.mean(min_ades)),
        min_fde=float(np.mean(min_fdes)),
        chi2=chi2,
        per_timestep=per_timestep,
        n_samples=len(prediction_sets),
        histogram_specs=specs,
    )


def save_report_json(report: MetricsReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)


def save_report_csv(report: MetricsReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["ade", repr(report.ade)])
        writer.writerow(["fde", repr(report.fde)])
        writer.writerow(["min_ade", repr(report.min_ade)])
        writer.writerow(["min_fde", repr(report.min_fde)])
        for p, v in report.chi2.items():
            writer.writerow([f"chi2_{p}", repr(v)])
        writer.writerow(["n_samples", report.n_samples])


def save_per_timestep_csv(report: MetricsReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestep", "mean_error"])
        for t, v in enumerate(report.per_timestep):
            writer.writerow([t, repr(v)])


def save_bins_csv(bins: list[dict], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "lo", "hi", "count", "mean_ade"])
        for b in bins:
            writer.writerow([b["bin"], b["lo"], b["hi"], b["count"], repr(b["mean_ade"])])
